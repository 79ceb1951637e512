#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace convotd {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Malformed or inconsistent input data (bad file, duplicate id, shape mismatch...).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A computation produced a value outside its domain (non-finite loss, divergence).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr double kProbFloor = 1e-10;

/// Stable 64-bit FNV-1a hash.
std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Derives an independent seed from a parent seed, a label and an index.
/// Every random stream in the project is obtained this way from the single run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    return std::mt19937_64(derive_seed(seed, label, index));
}

/// Worker cap from CONVO_TD_THREADS (defaults to hardware concurrency, at least 1).
unsigned thread_cap();

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries depend only
/// on n and the worker count, so callers that write into per-index slots stay deterministic.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

// Column-wise softmax helpers. Inputs are logits, one example per column.
Mat softmax_cols(const Mat& logits);
Mat log_softmax_cols(const Mat& logits);
Vec softmax(const Vec& logits);
/// Gradient with respect to softmax logits given the softmax output and the upstream gradient.
Mat softmax_backward(const Mat& probs, const Mat& upstream);

}  // namespace convotd
