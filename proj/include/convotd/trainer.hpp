#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "convotd/corpus.hpp"
#include "convotd/model.hpp"
#include "convotd/objectives.hpp"

namespace convotd {

/// One training example: a target message and the conversation it belongs to.
struct Example {
    BowVector x;
    BowVector c;
};

/// Every message of every instance becomes one example.
std::vector<Example> make_examples(const std::vector<ConversationInstance>& instances, const Vocabulary& vocab,
                                   bool context_excludes_target = false);

struct Dataset {
    std::vector<Example> train, dev;
    std::vector<bool> stop_flags;
    std::size_t vocab_size() const { return stop_flags.size(); }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 100;
    int patience = 5;
    std::uint64_t seed = 1;
    double clip_norm = 5.0;  // <= 0 disables clipping

    /// Test seam: maps (epoch, dev total) to the value early stopping sees.
    std::function<double(int, double)> dev_transform;
    /// Called after every epoch.
    std::function<void(int, const LossBreakdown&, const LossBreakdown&)> on_epoch;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    LossBreakdown train, dev;
    double dev_score = 0;  // value used for early stopping
    double wall_seconds = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    bool stopped_early = false;
    bool diverged = false;
    std::string divergence_reason;
};

struct TrainResult {
    ModelParameters params;
    TrainHistory history;
};

/// Mini-batch Adam on -total, early stopping on the deterministic dev objective.
/// Returns the parameters of the best dev epoch. On a non-finite loss training stops,
/// history.diverged is set and the best finite parameters so far are returned.
TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& train_config);

/// Mean objective over examples with deterministic latents.
LossBreakdown evaluate_objective(const std::vector<Example>& examples, const ModelParameters& params,
                                 const ModelConfig& cfg, const std::vector<bool>& stop_flags, int batch_size = 64);

/// Batch of examples in column layout.
ObjectiveBatch make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& indices,
                          std::size_t begin, std::size_t end, std::size_t vocab_size);

/// Deterministic permutation of n examples for an epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

void write_history_csv(const TrainHistory& history, const std::string& path);

// ---- grid search ----------------------------------------------------------

using Grid = std::map<std::string, std::vector<double>>;

struct GridCell {
    std::map<std::string, double> values;
    double dev_total = 0;
    int best_epoch = 0;
};

struct GridResult {
    ModelConfig best_model;
    TrainConfig best_train;
    std::size_t best_index = 0;
    std::vector<GridCell> cells;
    TrainResult best_result;
};

/// Keys: lambda, learning_rate, topics, discourse, tau, stop_penalty, batch_size,
/// topic_hidden, disc_hidden, seed.
void apply_grid_value(const std::string& key, double value, ModelConfig& model, TrainConfig& train);

/// Exhaustive product over grid values (keys in lexicographic order, last key varies
/// fastest). Cells train concurrently (CONVO_TD_THREADS workers). Selects the cell with
/// the highest dev total; ties keep the earlier cell.
GridResult grid_search(const Dataset& data, const ModelConfig& base_model, const TrainConfig& base_train,
                       const Grid& grid);

void write_grid_csv(const GridResult& result, const std::string& path);

}  // namespace convotd
