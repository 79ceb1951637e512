#include "convotd/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <thread>

#include "convotd/optimizer.hpp"

namespace convotd {

std::vector<Example> make_examples(const std::vector<ConversationInstance>& instances, const Vocabulary& vocab,
                                   bool context_excludes_target) {
    std::vector<Example> out;
    for (const auto& inst : instances) {
        BowVector whole = vectorize(inst, vocab);
        for (std::size_t m = 0; m < inst.size(); ++m) {
            Example ex;
            ex.x = vectorize(inst.messages[m], vocab);
            ex.c = context_excludes_target ? vectorize(inst, vocab, m) : whole;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw InputError("learning_rate must be > 0");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (max_epochs < 1) throw InputError("max_epochs must be >= 1");
    if (patience < 1) throw InputError("patience must be >= 1");
}

ObjectiveBatch make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& indices,
                          std::size_t begin, std::size_t end, std::size_t vocab_size) {
    std::vector<const BowVector*> xs, cs;
    for (std::size_t k = begin; k < end; ++k) {
        xs.push_back(&examples[indices[k]].x);
        cs.push_back(&examples[indices[k]].c);
    }
    return {dense_columns(xs, vocab_size), dense_columns(cs, vocab_size)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
    acc.l_z += w * b.l_z;
    acc.l_d += w * b.l_d;
    acc.l_x += w * b.l_x;
    acc.l_mi += w * b.l_mi;
    acc.total += w * b.total;
}

std::vector<Mat*> grad_list(ModelParameters& g) {
    std::vector<Mat*> out;
    for (auto& [n, m] : g.tensors()) out.push_back(m);
    return out;
}

}  // namespace

LossBreakdown evaluate_objective(const std::vector<Example>& examples, const ModelParameters& params,
                                 const ModelConfig& cfg, const std::vector<bool>& stop_flags, int batch_size) {
    LossBreakdown acc;
    if (examples.empty()) return acc;
    Vec stop = stop_mask(stop_flags);
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
    for (std::size_t b = 0; b < examples.size(); b += bs) {
        std::size_t e = std::min(examples.size(), b + bs);
        ObjectiveBatch batch = make_batch(examples, idx, b, e, stop_flags.size());
        LossBreakdown lb = total_loss(batch, params, cfg, stop);
        accumulate(acc, lb, static_cast<double>(e - b) / static_cast<double>(examples.size()));
    }
    return acc;
}

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& tc) {
    model_config.validate();
    tc.validate();
    if (data.train.empty()) throw InputError("empty corpus: no training examples");
    if (data.dev.empty()) throw InputError("empty corpus: no development examples");
    if (static_cast<std::size_t>(model_config.vocab_size) != data.vocab_size())
        throw InputError("model vocabulary size differs from dataset vocabulary size");

    const std::size_t V = data.vocab_size();
    Vec stop = stop_mask(data.stop_flags);

    TrainResult result;
    ModelParameters params = ModelParameters::random(model_config, derive_seed(tc.seed, "init"));
    ModelParameters grads = ModelParameters::zeros(model_config);
    std::vector<Mat*> param_list, grad_ptrs = grad_list(grads);
    for (auto& [n, m] : params.tensors()) param_list.push_back(m);
    std::vector<const Mat*> grad_view(grad_ptrs.begin(), grad_ptrs.end());
    Adam adam(param_list, {tc.learning_rate, 0.9, 0.999, 1e-8});

    result.params = params;
    double best_score = -std::numeric_limits<double>::infinity();
    int since_best = 0;
    const std::size_t bs = static_cast<std::size_t>(tc.batch_size);

    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        auto order = epoch_order(data.train.size(), tc.seed, epoch);
        auto noise_rng = make_rng(tc.seed, "noise", static_cast<std::uint64_t>(epoch));
        try {
            for (std::size_t b = 0; b < order.size(); b += bs) {
                std::size_t e = std::min(order.size(), b + bs);
                ObjectiveBatch batch = make_batch(data.train, order, b, e, V);
                LatentNoise noise = draw_noise(model_config, e - b, noise_rng);
                grads.set_zero();
                ObjectiveOptions opts;
                opts.noise = &noise;
                opts.grads = &grads;
                LossBreakdown lb = total_loss(batch, params, model_config, stop, opts);
                double norm = clip_global_norm(grad_ptrs, tc.clip_norm);
                if (!std::isfinite(norm)) throw NumericError("non-finite gradient");
                adam.step(grad_view);
                accumulate(rec.train, lb, static_cast<double>(e - b) / static_cast<double>(order.size()));
            }
            rec.dev = evaluate_objective(data.dev, params, model_config, data.stop_flags, tc.batch_size);
            if (!std::isfinite(rec.dev.total)) throw NumericError("non-finite dev objective");
        } catch (const NumericError& err) {
            result.history.diverged = true;
            result.history.divergence_reason = std::string(err.what()) + " at epoch " + std::to_string(epoch);
            break;
        }
        rec.dev_score = tc.dev_transform ? tc.dev_transform(epoch, rec.dev.total) : rec.dev.total;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(rec);
        if (tc.on_epoch) tc.on_epoch(epoch, rec.train, rec.dev);

        if (rec.dev_score > best_score) {
            best_score = rec.dev_score;
            result.history.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            result.history.stopped_early = epoch < tc.max_epochs;
            break;
        }
    }
    return result;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "epoch,l_z,l_d,l_x,l_mi,total,dev_total\n" << std::setprecision(10);
    for (const auto& r : history.epochs)
        out << r.epoch << ',' << r.train.l_z << ',' << r.train.l_d << ',' << r.train.l_x << ',' << r.train.l_mi << ','
            << r.train.total << ',' << r.dev.total << '\n';
}

// ---- grid search ----------------------------------------------------------

void apply_grid_value(const std::string& key, double value, ModelConfig& model, TrainConfig& train) {
    auto as_int = [&](const char* what) {
        if (value != std::floor(value)) throw InputError(std::string("grid value for ") + what + " must be an integer");
        return static_cast<int>(value);
    };
    if (key == "lambda") model.lambda = value;
    else if (key == "learning_rate") train.learning_rate = value;
    else if (key == "topics") model.topics = as_int("topics");
    else if (key == "discourse") model.roles = as_int("discourse");
    else if (key == "tau") model.tau = value;
    else if (key == "stop_penalty") model.stop_penalty = value;
    else if (key == "batch_size") train.batch_size = as_int("batch_size");
    else if (key == "topic_hidden") model.topic_hidden = as_int("topic_hidden");
    else if (key == "disc_hidden") model.disc_hidden = as_int("disc_hidden");
    else if (key == "seed") {
        if (value < 0) throw InputError("grid value for seed must be non-negative");
        train.seed = static_cast<std::uint64_t>(as_int("seed"));
    }
    else throw InputError("unknown grid key: " + key);
}

GridResult grid_search(const Dataset& data, const ModelConfig& base_model, const TrainConfig& base_train,
                       const Grid& grid) {
    if (grid.empty()) throw InputError("grid must not be empty");
    std::vector<std::string> keys;
    std::size_t cells = 1;
    for (const auto& [k, vals] : grid) {
        if (vals.empty()) throw InputError("grid key " + k + " has no values");
        keys.push_back(k);
        cells *= vals.size();
    }
    std::vector<ModelConfig> models(cells, base_model);
    std::vector<TrainConfig> trains(cells, base_train);
    std::vector<GridCell> rows(cells);
    for (std::size_t cell = 0; cell < cells; ++cell) {
        std::size_t rem = cell;
        for (std::size_t k = keys.size(); k-- > 0;) {
            const auto& vals = grid.at(keys[k]);
            double v = vals[rem % vals.size()];
            rem /= vals.size();
            apply_grid_value(keys[k], v, models[cell], trains[cell]);
            rows[cell].values[keys[k]] = v;
        }
        models[cell].validate();
        trains[cell].validate();
    }

    // Cells are independent; run them on separate workers and pick the winner afterwards
    // so the selection does not depend on completion order.
    std::vector<TrainResult> results(cells);
    std::vector<std::exception_ptr> errors(cells);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t cell; (cell = next.fetch_add(1)) < cells;) {
            try {
                results[cell] = train(data, models[cell], trains[cell]);
            } catch (...) {
                errors[cell] = std::current_exception();
            }
        }
    };
    std::size_t workers = std::min<std::size_t>(thread_cap(), cells);
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    GridResult result;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const auto& h = results[cell].history;
        double dev = h.best_epoch > 0 ? h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].dev.total
                                      : -std::numeric_limits<double>::infinity();
        rows[cell].dev_total = dev;
        rows[cell].best_epoch = h.best_epoch;
        if (dev > best || cell == 0) {
            best = dev;
            result.best_index = cell;
        }
    }
    result.best_model = models[result.best_index];
    result.best_train = trains[result.best_index];
    result.best_result = std::move(results[result.best_index]);
    result.cells = std::move(rows);
    return result;
}

void write_grid_csv(const GridResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    if (result.cells.empty()) return;
    for (const auto& [k, v] : result.cells.front().values) out << k << ',';
    out << "dev_total,best_epoch,selected\n" << std::setprecision(10);
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
        const auto& c = result.cells[i];
        for (const auto& [k, v] : c.values) out << v << ',';
        out << c.dev_total << ',' << c.best_epoch << ',' << (i == result.best_index ? 1 : 0) << '\n';
    }
}

}  // namespace convotd
