#include "convotd/util.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace convotd {

std::uint64_t fnv1a(std::string_view data, std::uint64_t h) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ fnv1a(label) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

unsigned thread_cap() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CONVO_TD_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) return static_cast<unsigned>(std::min<long>(v, hw));
    }
    return hw;
}

void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t workers = std::min<std::size_t>(thread_cap(), n);
    if (workers <= 1 || n < 64) {
        fn(0, n);
        return;
    }
    std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        std::size_t end = std::min(n, begin + chunk);
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

Mat softmax_cols(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        double m = logits.col(j).maxCoeff();
        out.col(j) = (logits.col(j).array() - m).exp().matrix();
        out.col(j) /= out.col(j).sum();
    }
    return out;
}

Mat log_softmax_cols(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        double m = logits.col(j).maxCoeff();
        double lse = m + std::log((logits.col(j).array() - m).exp().sum());
        out.col(j) = logits.col(j).array() - lse;
    }
    return out;
}

Vec softmax(const Vec& logits) {
    return softmax_cols(logits);
}

Mat softmax_backward(const Mat& probs, const Mat& upstream) {
    Mat weighted = probs.cwiseProduct(upstream);
    Eigen::RowVectorXd sums = weighted.colwise().sum();
    return weighted - probs * sums.asDiagonal();
}

}  // namespace convotd
