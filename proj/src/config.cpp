#include "convotd/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace convotd {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
    throw UsageError("invalid value for " + key + ": '" + value + "' (expected " + want + ")");
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& value) {
    Int out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
    return out;
}

double to_double(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    in.imbue(std::locale::classic());
    double out;
    char rest;
    if (value.empty() || !(in >> out) || (in >> rest) || !std::isfinite(out)) bad_value(key, value, "a number");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "true or false");
}

std::string fmt(double v) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(17);
    out << v;
    return out.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_int(T v) { return std::to_string(v); }

#define FIELD_STR(name, member, help, ...)                                                     \
    ConfigField{name, help, {__VA_ARGS__}, [](RunConfig& c, const std::string& v) { c.member = v; }, \
                [](const RunConfig& c) { return c.member; }}
#define FIELD_INT(name, member, help, ...)                                                                 \
    ConfigField{name, help, {__VA_ARGS__},                                                                 \
                [](RunConfig& c, const std::string& v) { c.member = parse_integer<decltype(c.member)>(name, v); }, \
                [](const RunConfig& c) { return fmt_int(c.member); }}
#define FIELD_DBL(name, member, help, ...)                                                                \
    ConfigField{name, help, {__VA_ARGS__}, [](RunConfig& c, const std::string& v) { c.member = to_double(name, v); }, \
                [](const RunConfig& c) { return fmt(c.member); }}
#define FIELD_BOOL(name, member, help, ...)                                                             \
    ConfigField{name, help, {__VA_ARGS__}, [](RunConfig& c, const std::string& v) { c.member = to_bool(name, v); }, \
                [](const RunConfig& c) { return fmt(c.member); }}

#define TRAINING "train", "grid"
#define USES_CKPT "eval-topics", "eval-disc", "classify", "export-top-words", "attribute"

}  // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"preprocess", "train",           "grid",      "eval-topics", "eval-disc",
                                                "classify",   "export-top-words", "attribute", "synth"};
    return names;
}

const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields{
        FIELD_STR("out_dir", out_dir, "directory for all artifacts"),
        ConfigField{"seed", "single seed every random stream derives from", {},
                    [](RunConfig& c, const std::string& v) {
                        c.seed = parse_integer<std::uint64_t>("seed", v);
                        c.train.seed = c.seed;
                    },
                    [](const RunConfig& c) { return fmt_int(c.seed); }},

        FIELD_STR("input", input, "posts JSON-lines file", "preprocess", "attribute"),
        FIELD_STR("stop_list", stop_list, "stop-word list, one word per line", "preprocess"),
        FIELD_INT("min_count", min_count, "minimum word count kept in the vocabulary", "preprocess"),
        FIELD_DBL("train_ratio", train_ratio, "share of instances in the training split", "preprocess"),
        FIELD_DBL("dev_ratio", dev_ratio, "share of instances in the development split", "preprocess"),
        FIELD_DBL("test_ratio", test_ratio, "share of instances in the test split", "preprocess"),

        FIELD_STR("data_dir", data_dir, "output directory of preprocess", TRAINING, USES_CKPT),
        FIELD_STR("out", out, "checkpoint path to write", TRAINING),
        FIELD_STR("ckpt", ckpt, "checkpoint to load", USES_CKPT),
        FIELD_INT("topics", model.topics, "number of topics K", TRAINING),
        FIELD_INT("discourse", model.roles, "number of discourse roles D", TRAINING),
        FIELD_INT("topic_hidden", model.topic_hidden, "hidden units of the topic encoder", TRAINING),
        FIELD_INT("disc_hidden", model.disc_hidden, "hidden units of the discourse encoder (0: affine)", TRAINING),
        FIELD_DBL("lambda", model.lambda, "weight of the mutual-information penalty", TRAINING),
        FIELD_DBL("tau", model.tau, "Gumbel-softmax temperature", TRAINING),
        FIELD_DBL("stop_penalty", model.stop_penalty, "logit penalty on stop words in the topic likelihood", TRAINING),
        ConfigField{"mi_marginal", "p(d) estimate in the MI penalty: batch or uniform", {TRAINING},
                    [](RunConfig& c, const std::string& v) {
                        if (v == "batch") c.model.mi_marginal = MiMarginal::batch;
                        else if (v == "uniform") c.model.mi_marginal = MiMarginal::uniform;
                        else bad_value("mi_marginal", v, "batch or uniform");
                    },
                    [](const RunConfig& c) {
                        return std::string(c.model.mi_marginal == MiMarginal::batch ? "batch" : "uniform");
                    }},
        FIELD_BOOL("context_excludes_target", context_excludes_target,
                   "leave the target message out of its conversation context", TRAINING, "classify"),
        FIELD_DBL("learning_rate", train.learning_rate, "optimizer step size", TRAINING),
        FIELD_INT("batch_size", train.batch_size, "examples per mini-batch", TRAINING),
        FIELD_INT("epochs", train.max_epochs, "maximum training epochs", TRAINING),
        FIELD_INT("patience", train.patience, "epochs without dev improvement before stopping", TRAINING),
        FIELD_DBL("clip_norm", train.clip_norm, "global gradient-norm clip (<= 0 disables)", TRAINING),

        FIELD_STR("grid_lambda", grid_lambda, "comma-separated lambda values", "grid"),
        FIELD_STR("grid_learning_rate", grid_learning_rate, "comma-separated learning rates", "grid"),
        FIELD_STR("grid_topics", grid_topics, "comma-separated topic counts", "grid"),
        FIELD_STR("grid_discourse", grid_discourse, "comma-separated role counts", "grid"),
        FIELD_STR("grid_seed", grid_seed, "comma-separated initialization seeds (restarts)", "grid"),

        FIELD_STR("ref", ref, "reference instances for coherence (default: <data-dir>/train.jsonl)", "eval-topics"),
        FIELD_INT("top_n", top_n, "words per topic or role", "eval-topics", "export-top-words"),
        FIELD_INT("window", window, "co-occurrence window for NPMI", "eval-topics"),
        FIELD_BOOL("exclude_stop", exclude_stop, "skip stop words in top-word lists", "eval-topics",
                   "export-top-words"),

        FIELD_STR("labeled", labeled, "posts JSON-lines file with labels or hashtags", "eval-disc", "classify"),
        FIELD_STR("mode", mode, "features, separate, joint or cnn", "classify"),
        FIELD_STR("merge_map", merge_map, "hashtag merge map, 'from<TAB>to' per line", "classify"),
        FIELD_STR("block_list", block_list, "hashtags to discard, one per line", "classify"),
        FIELD_INT("top_k", top_k, "number of most frequent hashtags kept as classes", "classify"),
        FIELD_DBL("svm_c", svm_c, "SVM regularization constant", "classify"),
        FIELD_INT("cnn_epochs", cnn.epochs, "CNN training epochs", "classify"),
        FIELD_INT("cnn_batch_size", cnn.batch_size, "CNN mini-batch size", "classify"),
        FIELD_DBL("cnn_learning_rate", cnn.learning_rate, "CNN step size", "classify"),
        FIELD_INT("embedding_dim", cnn.embedding_dim, "CNN word embedding size", "classify"),
        FIELD_INT("feature_maps", cnn.feature_maps, "CNN feature maps per filter width", "classify"),
        FIELD_DBL("dropout", cnn.dropout, "dropout on pooled CNN features", "classify"),
        FIELD_DBL("topic_weight", cnn.topic_weight, "weight of the topic/discourse objective in joint mode",
                  "classify"),

        FIELD_INT("synth_conversations", synth_conversations, "conversations to generate", "synth"),
        FIELD_INT("synth_topics", synth_topics, "planted topics", "synth"),
        FIELD_INT("synth_roles", synth_roles, "planted discourse roles", "synth"),
        FIELD_INT("synth_vocab", synth_vocab, "planted vocabulary size", "synth"),
        FIELD_DBL("hashtag_rate", hashtag_rate, "probability a message carries a topic hashtag", "synth"),
        FIELD_DBL("hashtag_noise", hashtag_noise, "probability that hashtag is a wrong topic's", "synth"),
    };
    return fields;
}

bool field_applies(const ConfigField& field, const std::string& command) {
    return field.commands.empty() ||
           std::find(field.commands.begin(), field.commands.end(), command) != field.commands.end();
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(n) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '-', '_');
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

RunConfig resolve_config(const std::string& command,
                         const std::vector<std::pair<std::string, std::string>>& file_values,
                         const std::vector<std::pair<std::string, std::string>>& flag_values) {
    const auto& cmds = command_names();
    if (std::find(cmds.begin(), cmds.end(), command) == cmds.end()) throw UsageError("unknown command: " + command);
    RunConfig cfg;
    cfg.command = command;
    cfg.train.seed = cfg.seed;
    auto apply = [&](const std::vector<std::pair<std::string, std::string>>& values, const char* source) {
        for (const auto& [key, value] : values) {
            auto it = std::find_if(config_fields().begin(), config_fields().end(),
                                   [&](const ConfigField& f) { return f.key == key; });
            if (it == config_fields().end()) throw UsageError(std::string("unknown ") + source + " key: " + key);
            if (!field_applies(*it, command))
                throw UsageError(std::string(source) + " key " + key + " does not apply to " + command);
            it->set(cfg, value);
        }
    };
    apply(file_values, "config");
    apply(flag_values, "flag");
    return cfg;
}

RunConfig parse_and_resolve(const std::vector<std::string>& args) {
    if (args.empty()) throw UsageError("missing command; expected one of: preprocess, train, grid, eval-topics, "
                                       "eval-disc, classify, export-top-words, attribute, synth");
    const std::string command = args.front();
    const auto& cmds = command_names();
    if (command == "--help" || command == "-h" || command == "help") {
        std::string text = "Usage: convotd <command> [--config FILE] [--key value ...]\n\nCommands:\n";
        for (const auto& c : cmds) text += "  " + c + "\n";
        throw HelpRequested(text + "\nRun 'convotd <command> --help' for the options of one command.\n");
    }
    if (std::find(cmds.begin(), cmds.end(), command) == cmds.end()) throw UsageError("unknown command: " + command);

    CLI::App app{"convotd " + command};
    std::string config_path;
    app.add_option("--config", config_path, "key = value configuration file");
    std::vector<std::pair<const ConfigField*, CLI::Option*>> options;
    std::map<std::string, std::string> raw;
    for (const auto& f : config_fields()) {
        if (!field_applies(f, command)) continue;
        std::string flag = "--" + f.key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (f.key == "out_dir") flag += ",--output-dir";
        options.emplace_back(&f, app.add_option(flag, raw[f.key], f.help));
    }
    std::vector<std::string> rest(args.begin() + 1, args.end());
    std::reverse(rest.begin(), rest.end());  // CLI11 consumes the vector from the back
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested(app.help());
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    std::vector<std::pair<std::string, std::string>> file_values, flag_values;
    if (!config_path.empty()) file_values = read_config_file(config_path);
    for (const auto& [field, opt] : options)
        if (opt->count() > 0) flag_values.emplace_back(field->key, raw[field->key]);
    return resolve_config(command, file_values, flag_values);
}

std::string config_snapshot(const RunConfig& cfg) {
    std::string out = "# resolved configuration for " + cfg.command + "\n";
    for (const auto& f : config_fields())
        if (field_applies(f, cfg.command)) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& key) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) throw UsageError("empty entry in " + key);
        out.push_back(to_double(key, item));
    }
    return out;
}

}  // namespace convotd
