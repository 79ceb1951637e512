#include "convotd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace convotd {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'V', 'T', 'D', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

json config_to_json(const ModelConfig& c) {
    return {{"topics", c.topics},       {"discourse", c.roles},          {"vocab_size", c.vocab_size},
            {"topic_hidden", c.topic_hidden}, {"disc_hidden", c.disc_hidden}, {"tau", c.tau},
            {"lambda", c.lambda},       {"stop_penalty", c.stop_penalty},
            {"mi_marginal", c.mi_marginal == MiMarginal::batch ? "batch" : "uniform"}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.topics = j.at("topics").get<int>();
    c.roles = j.at("discourse").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.topic_hidden = j.at("topic_hidden").get<int>();
    c.disc_hidden = j.at("disc_hidden").get<int>();
    c.tau = j.at("tau").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.stop_penalty = j.at("stop_penalty").get<double>();
    c.mi_marginal = j.at("mi_marginal").get<std::string>() == "uniform" ? MiMarginal::uniform : MiMarginal::batch;
    return c;
}

}  // namespace

void save_checkpoint(const ModelParameters& params, const ModelConfig& config, const std::string& vocab_hash,
                     const std::string& path) {
    params.check_shapes(config);
    json header;
    header["config"] = config_to_json(config);
    header["vocab_hash"] = vocab_hash;
    header["tensors"] = json::array();
    std::vector<float> payload;
    for (const auto& [name, m] : params.tensors()) {
        std::size_t offset = payload.size() * sizeof(float);
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index c = 0; c < m->cols(); ++c) payload.push_back(static_cast<float>((*m)(r, c)));
        header["tensors"].push_back({{"name", name},
                                     {"shape", {m->rows(), m->cols()}},
                                     {"offset", offset},
                                     {"nbytes", static_cast<std::size_t>(m->size()) * sizeof(float)}});
    }
    std::string text = header.dump();
    std::uint64_t len = text.size();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw InputError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto need = [&](std::size_t offset, std::size_t n, const char* what) {
        if (offset + n > bytes.size())
            throw InputError("checkpoint truncated: " + std::string(what) + " needs bytes [" + std::to_string(offset) +
                             ", " + std::to_string(offset + n) + ") but file has " + std::to_string(bytes.size()));
    };
    need(0, 16, "preamble");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw InputError("not a checkpoint file: " + path);
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof len);
    need(16, len, "header");
    json header;
    try {
        header = json::parse(bytes.substr(16, len));
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed checkpoint header: ") + e.what());
    }
    const std::size_t base = 16 + len;

    Checkpoint ck;
    try {
        ck.config = config_from_json(header.at("config"));
        ck.vocab_hash = header.at("vocab_hash").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed checkpoint header: ") + e.what());
    }
    ck.params = ModelParameters::zeros(ck.config);
    std::map<std::string, Mat*> slots;
    for (auto& [n, m] : ck.params.tensors()) slots[n] = m;
    std::size_t found = 0;
    for (const auto& t : header.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        auto rows = t.at("shape").at(0).get<Eigen::Index>();
        auto cols = t.at("shape").at(1).get<Eigen::Index>();
        std::size_t offset = t.at("offset").get<std::size_t>();
        auto it = slots.find(name);
        if (it == slots.end()) throw InputError("checkpoint has unknown tensor " + name);
        Mat& m = *it->second;
        if (rows != m.rows() || cols != m.cols())
            throw InputError("checkpoint tensor " + name + " has shape [" + std::to_string(rows) + "," +
                             std::to_string(cols) + "], config implies [" + std::to_string(m.rows()) + "," +
                             std::to_string(m.cols()) + "]");
        std::size_t nbytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
        need(base + offset, nbytes, ("tensor " + name).c_str());
        const char* src = bytes.data() + base + offset;
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                float f;
                std::memcpy(&f, src, sizeof f);
                src += sizeof f;
                m(r, c) = f;
            }
        ++found;
    }
    if (found != slots.size()) throw InputError("checkpoint is missing tensors");
    return ck;
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected, const std::string& expected_vocab_hash) {
    Checkpoint ck = load_checkpoint(path);
    ck.params.check_shapes(expected);
    if (!expected_vocab_hash.empty() && ck.vocab_hash != expected_vocab_hash)
        throw InputError("checkpoint vocabulary hash " + ck.vocab_hash + " differs from " + expected_vocab_hash);
    return ck;
}

ModelParameters round_to_float(const ModelParameters& params) {
    ModelParameters out = params;
    for (auto& [n, m] : out.tensors()) *m = m->cast<float>().cast<double>();
    return out;
}

}  // namespace convotd
