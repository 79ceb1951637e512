#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "convotd/checkpoint.hpp"
#include "convotd/downstream.hpp"
#include "convotd/eval.hpp"
#include "convotd/objectives.hpp"
#include "convotd/synthetic.hpp"
#include "convotd/trainer.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace convotd;
using namespace testing_helpers;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Runs jobs[i] for every i on up to thread_cap() workers.
void run_jobs(const std::vector<std::function<void()>>& jobs) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < jobs.size();) jobs[i]();
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < std::min<std::size_t>(thread_cap(), jobs.size()); ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

// ---- 1. divergence oracles ----------------------------------------------------

Outcome divergence_oracles() {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> mu_d(-2, 2), ls_d(-1, 1);
    double worst_g = 0, worst_c = 0;
    for (int t = 0; t < 100; ++t) {
        double mu = mu_d(rng), ls = ls_d(rng);
        worst_g = std::max(worst_g, std::abs(gaussian_kld(vec({mu}), vec({ls})) - oracles::kld_quadrature(mu, std::exp(ls))));
        Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(2, 10)(rng);
        Vec q = random_simplex(n, rng), p = random_simplex(n, rng);
        worst_c = std::max(worst_c, std::abs(categorical_kld(q, p) - oracles::direct_kld(q, p)));
    }
    return {worst_g <= 1e-6 && worst_c <= 1e-9,
            fmt("max |gaussian - quadrature| %.2e (tol 1e-6), max |categorical - direct| %.2e (tol 1e-9)", worst_g, worst_c)};
}

// ---- 2. gradient check -----------------------------------------------------------

Outcome gradient_check() {
    const int V = 30, B = 4;
    ModelConfig cfg;
    cfg.vocab_size = V;
    cfg.topics = 3;
    cfg.roles = 2;
    cfg.topic_hidden = 6;
    cfg.disc_hidden = 5;
    cfg.lambda = 1.0;  // MI map gradient on the same scale as the other groups
    std::mt19937_64 rng(2);
    auto params = ModelParameters::random(cfg, 2, 0.3);
    for (auto& [name, t] : params.tensors())
        if (t->cols() == 1) fill_uniform(*t, rng, 0.1);
    fill_uniform(params.aux_w, rng, 1.0);
    std::vector<BowVector> xs, cs;
    std::vector<const BowVector*> xp, cp;
    for (int i = 0; i < B; ++i) {
        xs.push_back(random_bow(V, rng));
        cs.push_back(xs.back());
        cs.back() += random_bow(V, rng);
    }
    for (int i = 0; i < B; ++i) {
        xp.push_back(&xs[static_cast<std::size_t>(i)]);
        cp.push_back(&cs[static_cast<std::size_t>(i)]);
    }
    ObjectiveBatch batch{dense_columns(xp, V), dense_columns(cp, V)};
    std::vector<bool> flags(V, false);
    flags[0] = flags[1] = true;
    Vec stop = stop_mask(flags);
    auto noise = draw_noise(cfg, B, rng);
    // The batch marginal is a constant in the gradient; pin it to its current value.
    Vec marginal = mi_marginal(discourse_encoder_forward(params, batch.x).pi, cfg);
    ObjectiveOptions opts;
    opts.noise = &noise;
    opts.marginal = &marginal;
    auto grads = ModelParameters::zeros(cfg);
    opts.grads = &grads;
    total_loss(batch, params, cfg, stop, opts);
    opts.grads = nullptr;

    const double h = 1e-6;
    double worst = 0;
    std::string worst_name;
    auto named = params.tensors();
    auto named_grads = grads.tensors();
    for (std::size_t t = 0; t < named.size(); ++t) {
        Mat& w = *named[t].second;
        Mat numeric(w.rows(), w.cols());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double keep = w.data()[i];
            w.data()[i] = keep + h;
            const double up = -total_loss(batch, params, cfg, stop, opts).total;
            w.data()[i] = keep - h;
            const double down = -total_loss(batch, params, cfg, stop, opts).total;
            w.data()[i] = keep;
            numeric.data()[i] = (up - down) / (2 * h);
        }
        double err = (numeric - *named_grads[t].second).norm() / std::max(numeric.norm(), 1e-12);
        if (numeric.norm() == 0) err = INFINITY;  // every group must carry gradient
        if (err > worst || worst_name.empty()) {
            worst = std::max(worst, err);
            worst_name = named[t].first;
        }
    }
    return {worst < 1e-4, fmt("%zu parameter groups, worst relative error %.2e (%s), tol 1e-4", named.size(), worst,
                              worst_name.c_str())};
}

// ---- 3. Gumbel-softmax law ---------------------------------------------------------

Outcome gumbel_law() {
    auto pi = vec({0.05, 0.15, 0.2, 0.25, 0.35});
    auto rng = make_rng(3, "gumbel-law");
    std::vector<int> counts(5, 0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) ++counts[argmax(sample_discourse(pi, 0.5, gumbel_noise(5, rng)))];
    double worst = 0;
    for (int k = 0; k < 5; ++k) worst = std::max(worst, std::abs(counts[static_cast<std::size_t>(k)] / double(n) - pi(k)));
    return {worst <= 0.02, fmt("D=5, 20000 draws, tau 0.5: max |freq - pi| %.4f (tol 0.02)", worst)};
}

// ---- planted corpus runs shared by criteria 4, 5 and 7 ---------------------------

struct PlantedRun {
    std::uint64_t seed = 0;
    double lambda = 0;
    TrainResult result;
    double dev_best = 0;
    double topic_overlap = 0, disc_overlap = 0, disc_purity = 0, js = 0;
};

struct PlantedSetup {
    PlantedCorpus corpus;
    Vocabulary vocab;
    Dataset data;
};

const PlantedSetup& planted_setup() {
    static const PlantedSetup setup = [] {
        PlantedSetup s;
        PlantedSpec spec;  // K=5, D=4, V=200, 2000 four-message conversations, seed 7
        s.corpus = generate_planted(spec);
        auto instances = build_instances(s.corpus.posts);
        s.vocab = build_vocabulary(instances, 1, {});
        auto split = split_dataset(instances, {0.8, 0.1, 0.1}, 7);
        s.data = Dataset{make_examples(split.train, s.vocab), make_examples(split.dev, s.vocab), s.vocab.stop_flags()};
        return s;
    }();
    return setup;
}

ModelConfig planted_model(double lambda) {
    ModelConfig m;
    m.topics = 5;
    m.roles = 4;
    m.vocab_size = static_cast<int>(planted_setup().vocab.size());
    m.lambda = lambda;
    return m;
}

TrainConfig planted_train(std::uint64_t seed) {
    TrainConfig t;  // lr 1e-3, batch 64, at most 100 epochs
    t.patience = 20;
    t.seed = seed;
    return t;
}

void score_run(PlantedRun& run) {
    const auto& s = planted_setup();
    const auto& h = run.result.history;
    run.dev_best = h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].dev.total;
    Mat learned_t = topic_word_matrix(run.result.params), learned_d = discourse_word_matrix(run.result.params);
    run.topic_overlap = align_clusters(learned_t, planted_in_vocab(s.corpus.topic_word, s.corpus.words, s.vocab)).mean_top10_overlap;
    run.disc_overlap = align_clusters(learned_d, planted_in_vocab(s.corpus.role_word, s.corpus.words, s.vocab)).mean_top10_overlap;
    std::vector<int> assign, gold;
    for (std::size_t i = 0; i < s.corpus.posts.size(); ++i) {
        auto x = vectorize(normalize_tokens(s.corpus.posts[i].text), s.vocab);
        assign.push_back(static_cast<int>(argmax(encode_discourse(x, run.result.params))));
        gold.push_back(s.corpus.post_role[i]);
    }
    run.disc_purity = purity(assign, gold);
    run.js = mean_topic_discourse_js(learned_t, learned_d);
}

const std::vector<PlantedRun>& planted_runs(double lambda) {
    static std::map<double, std::vector<PlantedRun>> cache;
    auto it = cache.find(lambda);
    if (it != cache.end()) return it->second;
    std::vector<PlantedRun> runs(3);
    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < runs.size(); ++i)
        jobs.push_back([&, i] {
            runs[i].seed = i + 1;
            runs[i].lambda = lambda;
            runs[i].result = train(planted_setup().data, planted_model(lambda), planted_train(i + 1));
            score_run(runs[i]);
        });
    run_jobs(jobs);
    return cache.emplace(lambda, std::move(runs)).first->second;
}

// ---- 4. planted recovery -------------------------------------------------------------

Outcome planted_recovery() {
    const auto& runs = planted_runs(0.01);
    // model selection across restarts by the dev objective
    const PlantedRun* best = &runs[0];
    for (const auto& r : runs)
        if (r.dev_best > best->dev_best) best = &r;
    std::string restarts;
    for (const auto& r : runs)
        restarts += fmt(" [seed %d: dev %.2f, epochs %zu, topic %.2f]", static_cast<int>(r.seed), r.dev_best,
                        r.result.history.epochs.size(), r.topic_overlap);
    bool ok = best->topic_overlap >= 0.6 && best->disc_overlap >= 0.6 && best->disc_purity >= 0.7;
    return {ok, fmt("selected seed %d: topic overlap %.2f (>= 0.6), discourse overlap %.2f (>= 0.6), discourse purity %.3f "
                    "(>= 0.7);",
                    static_cast<int>(best->seed), best->topic_overlap, best->disc_overlap, best->disc_purity) +
                    restarts};
}

// ---- 5. MI-loss effect ------------------------------------------------------------------

Outcome mi_effect() {
    const auto& with = planted_runs(0.01);
    const auto& without = planted_runs(0.0);
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < with.size(); ++i) {
        ok = ok && with[i].js > without[i].js;
        detail += fmt("%sseed %d: JS %.4f (lambda 0.01) vs %.4f (lambda 0)", i ? "; " : "", static_cast<int>(with[i].seed),
                      with[i].js, without[i].js);
    }
    return {ok, detail};
}

// ---- 6. clustering-metric oracles ------------------------------------------------------------

Outcome clustering_oracles() {
    std::mt19937_64 rng(6);
    double worst = 0, asym = 0;
    for (int t = 0; t < 50; ++t) {
        std::size_t n = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
        int ka = std::uniform_int_distribution<int>(1, 5)(rng), kl = std::uniform_int_distribution<int>(1, 5)(rng);
        std::vector<int> a(n), l(n);
        for (auto& x : a) x = std::uniform_int_distribution<int>(0, ka - 1)(rng);
        for (auto& x : l) x = std::uniform_int_distribution<int>(0, kl - 1)(rng);
        auto got = cluster_scores(a, l);
        auto ref = oracles::brute_cluster_scores(a, l);
        worst = std::max({worst, std::abs(got.purity - ref.purity), std::abs(got.homogeneity - ref.homogeneity),
                          std::abs(got.vi - ref.vi)});
        asym = std::max(asym, std::abs(variation_of_information(a, l) - variation_of_information(l, a)));
    }
    std::vector<int> same{0, 2, 1, 1, 0, 2, 3};
    auto id = cluster_scores(same, same);
    bool identical = std::abs(id.purity - 1) <= 1e-12 && std::abs(id.homogeneity - 1) <= 1e-12 && std::abs(id.vi) <= 1e-12;
    return {worst <= 1e-9 && asym <= 1e-12 && identical,
            fmt("50 random clusterings: max deviation %.2e (tol 1e-9), VI asymmetry %.2e, identical -> (%.3f, %.3f, %.3f)",
                worst, asym, id.purity, id.homogeneity, id.vi)};
}

// ---- 7. optimization sanity ------------------------------------------------------------------

Outcome optimization_sanity() {
    const auto& runs = planted_runs(0.01);
    bool smooth_ok = true;
    std::string detail;
    for (const auto& r : runs) {
        const auto& e = r.result.history.epochs;
        double worst_drop = 0;
        bool ok = e.size() >= 20;
        std::vector<double> smoothed;
        for (std::size_t i = 0; i < std::min<std::size_t>(20, e.size()); ++i) {
            std::size_t lo = i >= 4 ? i - 4 : 0;
            double s = 0;
            for (std::size_t k = lo; k <= i; ++k) s += e[k].train.total;
            smoothed.push_back(s / static_cast<double>(i - lo + 1));
        }
        for (std::size_t i = 1; i < smoothed.size(); ++i) worst_drop = std::max(worst_drop, smoothed[i - 1] - smoothed[i]);
        ok = ok && worst_drop <= 0;
        smooth_ok = smooth_ok && ok;
        detail += fmt("seed %d smoothed objective %.2f -> %.2f, largest drop %.3g; ", static_cast<int>(r.seed),
                      smoothed.front(), smoothed.back(), worst_drop);
    }

    // Injected plateau: dev improves for 4 epochs, then stays flat.
    Dataset toy;
    std::mt19937_64 rng(7);
    toy.stop_flags.assign(20, false);
    for (int i = 0; i < 50; ++i) {
        Example ex{random_bow(20, rng), {}};
        ex.c = ex.x;
        (i < 40 ? toy.train : toy.dev).push_back(ex);
    }
    ModelConfig m;
    m.vocab_size = 20;
    m.topics = 3;
    m.roles = 2;
    m.topic_hidden = 8;
    m.disc_hidden = 4;
    bool plateau_ok = true;
    for (int patience : {1, 3, 5}) {
        TrainConfig t;
        t.max_epochs = 30;
        t.batch_size = 16;
        t.patience = patience;
        t.dev_transform = [](int epoch, double) { return static_cast<double>(std::min(epoch, 4)); };
        auto res = train(toy, m, t);
        int stop = static_cast<int>(res.history.epochs.size());
        bool ok = res.history.best_epoch == 4 && stop - res.history.best_epoch <= patience && res.history.stopped_early;
        plateau_ok = plateau_ok && ok;
        detail += fmt("plateau patience %d: optimum 4, stopped at %d; ", patience, stop);
    }
    detail.resize(detail.size() - 2);
    return {smooth_ok && plateau_ok, detail};
}

// ---- 8. downstream ---------------------------------------------------------------------------

Outcome downstream() {
    bool features_ok = true, joint_ok = true;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        PlantedSpec spec;
        spec.hashtag_rate = 0.5;
        spec.hashtag_noise = 0.2;
        spec.seed = 100 + seed;
        auto pc = generate_planted(spec);
        auto instances = build_instances(pc.posts);
        auto vocab = build_vocabulary(instances, 1, {});
        auto split = split_dataset(instances, {0.9, 0.1, 0.0}, seed);
        Dataset data{make_examples(split.train, vocab), make_examples(split.dev, vocab), vocab.stop_flags()};
        ModelConfig mc;
        mc.topics = 5;
        mc.roles = 4;
        mc.vocab_size = static_cast<int>(vocab.size());
        TrainConfig tc;
        tc.seed = seed;
        tc.patience = 20;
        auto topic_model = round_to_float(train(data, mc, tc).params);  // as stored in a checkpoint

        auto classified = build_hashtag_labels(instances, {});
        auto labeled = make_labeled_data(instances, classified, vocab);
        Mat feats = topic_discourse_features(labeled, topic_model);
        auto svm_feat = train_classifier(to_sparse(feats), labeled.labels, labeled.n_classes, seed);
        auto svm_bow = train_classifier(bow_features(labeled), labeled.labels, labeled.n_classes, seed);

        // [theta; pi] of every message, clustered by its conversation's planted topic
        Mat all(static_cast<Eigen::Index>(pc.posts.size()), mc.topics + mc.roles);
        std::vector<int> topic_of;
        Eigen::Index row = 0;
        for (std::size_t c = 0; c < instances.size(); ++c)
            for (std::size_t m = 0; m < instances[c].size(); ++m, ++row) {
                all.row(row) = extract_features(vectorize(instances[c].messages[m], vocab), vectorize(instances[c], vocab),
                                                topic_model)
                                   .transpose();
                topic_of.push_back(pc.post_topic[c * static_cast<std::size_t>(spec.messages) + m]);
            }
        double sil = silhouette(all.topRows(2000), std::vector<int>(topic_of.begin(), topic_of.begin() + 2000));

        CnnConfig cnn;
        cnn.epochs = 6;
        auto separate_params = topic_model, joint_params = topic_model;
        auto separate = joint_train(labeled, separate_params, mc, vocab.stop_flags(), cnn, TrainMode::separate, seed);
        auto joint = joint_train(labeled, joint_params, mc, vocab.stop_flags(), cnn, TrainMode::joint, seed);

        features_ok = features_ok && svm_feat.metrics.accuracy >= svm_bow.metrics.accuracy;
        joint_ok = joint_ok && joint.metrics.accuracy >= separate.metrics.accuracy;
        detail += fmt("%sseed %d: SVM [theta;pi] %.3f vs BoW %.3f, joint %.3f vs separate %.3f, silhouette %.3f",
                      seed > 1 ? "; " : "", static_cast<int>(seed), svm_feat.metrics.accuracy, svm_bow.metrics.accuracy,
                      joint.metrics.accuracy, separate.metrics.accuracy, sil);
    }
    return {features_ok && joint_ok, detail};
}

// ---- 9. structural properties ---------------------------------------------------------------

Outcome structural() {
    std::mt19937_64 rng(9);
    bool trees_ok = true;
    for (int t = 0; t < 200 && trees_ok; ++t) {
        int n = std::uniform_int_distribution<int>(1, 60)(rng);
        std::vector<RawPost> posts;
        std::set<std::string> internal;
        std::map<std::string, std::string> parent;
        for (int i = 0; i < n; ++i) {
            RawPost p{"p" + std::to_string(i), std::nullopt, "w", std::nullopt};
            if (i > 0) {
                p.parent_id = "p" + std::to_string(std::uniform_int_distribution<int>(0, i - 1)(rng));
                internal.insert(*p.parent_id);
                parent[p.id] = *p.parent_id;
            }
            posts.push_back(p);
        }
        std::shuffle(posts.begin(), posts.end(), rng);
        auto paths = build_instances(posts);
        std::set<std::string> ends;
        for (const auto& path : paths) {
            ends.insert(path.ids.back());
            trees_ok = trees_ok && path.ids.front() == "p0" && !internal.count(path.ids.back());
            for (std::size_t k = 1; k < path.size(); ++k) trees_ok = trees_ok && parent[path.ids[k]] == path.ids[k - 1];
        }
        trees_ok = trees_ok && paths.size() == static_cast<std::size_t>(n) - internal.size() && ends.size() == paths.size();
    }

    ModelConfig cfg;
    cfg.topics = 5;
    cfg.roles = 4;
    cfg.vocab_size = 200;
    auto params = ModelParameters::random(cfg, 9, 0.5);
    auto dir = std::filesystem::temp_directory_path() / "convotd_acceptance";
    std::filesystem::create_directories(dir);
    auto path = (dir / "roundtrip.ckpt").string();
    save_checkpoint(params, cfg, "hash", path);
    auto loaded = load_checkpoint(path, cfg, "hash").params;
    auto expected = round_to_float(params);
    bool ckpt_ok = true;
    for (std::size_t i = 0; i < loaded.tensors().size(); ++i)
        ckpt_ok = ckpt_ok && *loaded.tensors()[i].second == *expected.tensors()[i].second;
    save_checkpoint(loaded, cfg, "hash", path);
    auto twice = load_checkpoint(path).params;
    for (std::size_t i = 0; i < loaded.tensors().size(); ++i)
        ckpt_ok = ckpt_ok && *twice.tensors()[i].second == *loaded.tensors()[i].second;
    std::filesystem::remove_all(dir);

    double worst_vec = 0, worst_row = 0;
    for (int t = 0; t < 200; ++t) {
        auto p = ModelParameters::random(cfg, static_cast<std::uint64_t>(t), t % 2 ? 0.05 : 1.0);
        auto x = random_bow(200, rng, 5), c = random_bow(200, rng, 5);
        auto [mu, ls] = encode_topic(c, p);
        Vec theta = topic_mixture(sample_topic(mu, ls, normal_noise(5, rng)), p);
        Vec pi = encode_discourse(x, p);
        Vec d = sample_discourse(pi, 0.5, gumbel_noise(4, rng));
        Vec beta = decode(theta, d, p);
        auto inf = infer(x, c, p);
        for (const Vec* v : {&theta, &pi, &d, &beta, &inf.theta, &inf.pi}) {
            if ((v->array() < 0).any()) worst_vec = INFINITY;
            worst_vec = std::max(worst_vec, std::abs(v->sum() - 1));
        }
        for (const Mat& m : {topic_word_matrix(p), discourse_word_matrix(p)})
            for (Eigen::Index k = 0; k < m.rows(); ++k) worst_row = std::max(worst_row, std::abs(m.row(k).sum() - 1));
    }
    bool norm_ok = worst_vec <= 1e-6 && worst_row <= 1e-5;
    return {trees_ok && ckpt_ok && norm_ok,
            fmt("200 random trees %s; checkpoint round trip %s; max |sum - 1| %.1e for theta/pi/d/beta (tol 1e-6), %.1e for "
                "phi rows (tol 1e-5)",
                trees_ok ? "ok" : "FAILED", ckpt_ok ? "bit-exact" : "MISMATCH", worst_vec, worst_row)};
}

struct Criterion {
    int id;
    const char* name;
    double time_limit;  // seconds; 0 when the criterion states no bound
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks: one PASS/FAIL line per criterion"};
    std::vector<int> only;
    app.add_option("criteria", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "divergence oracles", 5, divergence_oracles},
        {2, "gradient correctness", 30, gradient_check},
        {3, "Gumbel-softmax law", 5, gumbel_law},
        {4, "planted-model recovery", 600, planted_recovery},
        {5, "MI-loss effect", 0, mi_effect},
        {6, "clustering-metric oracles", 0, clustering_oracles},
        {7, "optimization sanity", 0, optimization_sanity},
        {8, "downstream", 600, downstream},
        {9, "structural properties", 60, structural},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        double secs = seconds_since(t0);
        bool in_time = c.time_limit == 0 || secs <= c.time_limit;
        bool pass = o.pass && in_time;
        failures += !pass;
        std::string limit = c.time_limit > 0 ? fmt(" (limit %.0f s)", c.time_limit) : "";
        std::printf("%s %d %s: %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    limit.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
