#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "convotd/corpus.hpp"
#include "convotd/model.hpp"
#include "convotd/objectives.hpp"

namespace convotd {

// ---- hashtag proxy labels -------------------------------------------------

struct HashtagLabelOptions {
    std::map<std::string, std::string> merge_map;  // hashtag -> canonical hashtag
    std::set<std::string> block_list;              // non-topical hashtags, after merging
    std::size_t top_k = 50;
};

/// A labeled message, addressed by the first instance (path) that contains it.
struct LabeledMessage {
    std::size_t instance = 0;
    std::size_t position = 0;
    int label = 0;
};

struct ClassifiedCorpus {
    std::vector<std::string> classes;      // label id -> hashtag, most frequent first
    std::vector<std::size_t> class_sizes;  // messages per label
    std::vector<LabeledMessage> messages;
    std::vector<std::string> warnings;
};

/// Hashtag frequencies count distinct messages. Messages without a retained hashtag are
/// dropped; a message with several takes the most frequent one, ties lexicographic.
/// Merge chains are followed to their end; a cycle is an InputError.
ClassifiedCorpus build_hashtag_labels(const std::vector<ConversationInstance>& corpus,
                                      const HashtagLabelOptions& options);

/// Hashtags a message carries after the merge map and block list are applied.
std::vector<std::string> canonical_hashtags(const std::vector<std::string>& tags, const HashtagLabelOptions& options);

// ---- features ---------------------------------------------------------------

/// [theta; pi] from the deterministic inference path; theta comes from the conversation.
Vec extract_features(const BowVector& x_bow, const BowVector& c_bow, const ModelParameters& params);

/// Inputs of every labeled message, resolved against a vocabulary.
struct LabeledData {
    std::vector<BowVector> x, c;
    std::vector<std::vector<int>> tokens;  // in-vocabulary token ids, text order
    std::vector<int> labels;
    int n_classes = 0;
    std::size_t size() const { return labels.size(); }
};

LabeledData make_labeled_data(const std::vector<ConversationInstance>& corpus, const ClassifiedCorpus& classified,
                              const Vocabulary& vocab);

/// Rows of [theta; pi] for every labeled message, computed in parallel.
Mat topic_discourse_features(const LabeledData& data, const ModelParameters& params);

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

SparseRows to_sparse(const Mat& dense_rows);
/// Raw message bag-of-words counts, one row per message.
SparseRows bow_features(const LabeledData& data);

// ---- metrics -----------------------------------------------------------------

struct ClassificationMetrics {
    double accuracy = 0;
    double macro_f1 = 0;
    std::vector<double> per_class_f1;
    Eigen::MatrixXi confusion;  // gold x predicted
};

/// Macro-F1 averages over all n_classes; a class with no true positive scores 0.
ClassificationMetrics classification_metrics(const std::vector<int>& gold, const std::vector<int>& predicted,
                                             int n_classes);

// ---- linear classifier ---------------------------------------------------------

struct SvmOptions {
    double c = 1.0;
    int max_iterations = 1000;
    double tolerance = 0.1;  // stop when the projected-gradient spread falls below this
};

/// One-vs-rest linear SVM (hinge loss, L2 regularized) trained by dual coordinate
/// descent with an appended constant bias feature.
class LinearSvm {
public:
    void fit(const SparseRows& features, const std::vector<int>& labels, int n_classes, std::uint64_t seed,
             const SvmOptions& options = {});
    Vec scores(const SparseRows& features, Eigen::Index row) const;
    /// Highest score, ties to the lowest class id.
    std::vector<int> predict(const SparseRows& features) const;

    const Mat& weights() const { return w_; }  // n_classes x (dim + 1)

private:
    Mat w_;
};

/// Seeded 90/10 partition of n items; the second part has max(1, round(n / 10)) items.
struct HoldoutSplit {
    std::vector<std::size_t> train, test;
};
HoldoutSplit holdout_split(std::size_t n, std::uint64_t seed);

struct ClassifierReport {
    ClassificationMetrics metrics;
    std::size_t n_train = 0, n_test = 0;
};

/// Fits the linear SVM on the training part of holdout_split and scores the held-out part.
/// Throws InputError when fewer than two classes are present.
ClassifierReport train_classifier(const SparseRows& features, const std::vector<int>& labels, int n_classes,
                                  std::uint64_t seed, const SvmOptions& options = {});

// ---- convolutional classifier and joint training ------------------------------------

struct CnnConfig {
    int embedding_dim = 200;
    std::vector<int> widths{3, 4, 5};
    int feature_maps = 100;
    double dropout = 0.5;  // on the pooled convolutional features during training
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;
    /// Weight of the topic/discourse objective in joint training; 0 leaves only the
    /// cross-entropy path into the encoders. The objective sums over every word of the
    /// conversation, so it is scaled down to keep the per-message cross-entropy visible.
    double topic_weight = 0.01;
    /// Feed [theta; pi] into the output layer; false gives the CNN-only baseline.
    bool use_representations = true;

    void validate() const;
};

struct CnnParameters {
    Mat embedding;              // V x E
    std::vector<Mat> filter;    // per width: (w * E) x maps
    std::vector<Mat> filter_b;  // per width: 1 x maps
    Mat out_w, out_b;           // C x (maps * widths + extra), C x 1

    static CnnParameters random(const CnnConfig& cfg, std::size_t vocab_size, int extra_features, int n_classes,
                                std::uint64_t seed, double scale = 0.05);
    std::vector<Mat*> tensors();
    void set_zero();
};

/// Logits (C x B) for a batch of token sequences with optional extra features (F x B).
Mat cnn_logits(const CnnParameters& p, const CnnConfig& cfg, const std::vector<const std::vector<int>*>& tokens,
               const Mat& extra);

enum class TrainMode { cnn_only, separate, joint };

struct JointReport {
    TrainMode mode = TrainMode::joint;
    ClassificationMetrics metrics;
    std::size_t n_train = 0, n_test = 0;
    std::vector<double> epoch_cross_entropy;
};

/// Trains the CNN classifier on the 90% part of holdout_split(seed) and scores the rest.
/// separate: [theta; pi] from the frozen topic model. joint: the topic model is updated by
/// the cross-entropy gradient plus topic_weight times the negated objective.
/// topic_model is updated in place in joint mode.
JointReport joint_train(const LabeledData& data, ModelParameters& topic_model, const ModelConfig& model_config,
                        const std::vector<bool>& stop_flags, const CnnConfig& cnn_config, TrainMode mode,
                        std::uint64_t seed);

const char* to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

}  // namespace convotd
