#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "convotd/downstream.hpp"
#include "convotd/model.hpp"
#include "convotd/trainer.hpp"

namespace convotd {

/// Bad command line or configuration file; the CLI exits with status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// --help on a command; what() is the help text. The CLI prints it and exits 0.
class HelpRequested : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every setting of one CLI invocation. Resolution order: defaults < config file < flags.
struct RunConfig {
    std::string command;

    // paths
    std::string input, out_dir = ".", data_dir, out, ckpt, ref, labeled, merge_map, block_list, stop_list;

    // corpus
    std::int64_t min_count = 20;
    bool context_excludes_target = false;
    double train_ratio = 0.8, dev_ratio = 0.1, test_ratio = 0.1;

    ModelConfig model;
    TrainConfig train;
    std::uint64_t seed = 1;

    // grid: comma-separated value lists, empty lists are skipped
    std::string grid_lambda = "0.001,0.01,0.1", grid_learning_rate = "0.001,0.0005";
    std::string grid_topics, grid_discourse, grid_seed;

    // evaluation
    int top_n = 10;
    int window = 10;
    bool exclude_stop = false;

    // downstream
    std::string mode = "features";
    int top_k = 50;
    double svm_c = 1.0;
    CnnConfig cnn;

    // synthetic fixture
    int synth_conversations = 300;
    int synth_topics = 5, synth_roles = 4, synth_vocab = 200;
    double hashtag_rate = 0.5, hashtag_noise = 0.1;
};

/// One settable key. Flags are the key with '_' replaced by '-'.
struct ConfigField {
    std::string key;
    std::string help;
    std::vector<std::string> commands;  // empty: every command
    void (*set)(RunConfig&, const std::string&);
    std::string (*get)(const RunConfig&);
};

const std::vector<ConfigField>& config_fields();
const std::vector<std::string>& command_names();
bool field_applies(const ConfigField& field, const std::string& command);

/// Parses "key = value" lines; '#' starts a comment. Throws UsageError on malformed lines.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

/// Applies defaults, then file entries, then flag entries. Unknown keys, keys that do not
/// apply to the command and malformed values are UsageErrors.
RunConfig resolve_config(const std::string& command,
                         const std::vector<std::pair<std::string, std::string>>& file_values,
                         const std::vector<std::pair<std::string, std::string>>& flag_values);

/// argv without the program name: command first, then flags. "--config <path>" names a
/// config file. Throws UsageError.
RunConfig parse_and_resolve(const std::vector<std::string>& args);

/// key = value lines for every field that applies to the command, in registry order.
std::string config_snapshot(const RunConfig& cfg);

std::vector<double> parse_double_list(const std::string& text, const std::string& key);

}  // namespace convotd
