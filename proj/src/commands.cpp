#include "convotd/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "convotd/checkpoint.hpp"
#include "convotd/coherence.hpp"
#include "convotd/downstream.hpp"
#include "convotd/eval.hpp"
#include "convotd/synthetic.hpp"

namespace convotd {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required --") + flag);
}

fs::path prepare_out_dir(const RunConfig& cfg) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    std::ofstream(dir / "resolved_config.txt") << config_snapshot(cfg);
    return dir;
}

void write_json(const ordered_json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << std::setprecision(10);
    return out;
}

Vocabulary load_data_vocab(const RunConfig& cfg) {
    require(cfg.data_dir, "data-dir");
    return load_vocabulary_tsv((fs::path(cfg.data_dir) / "vocab.tsv").string());
}

Checkpoint load_model(const RunConfig& cfg, const Vocabulary& vocab) {
    require(cfg.ckpt, "ckpt");
    Checkpoint ck = load_checkpoint(cfg.ckpt);
    if (ck.vocab_hash != vocab.hash())
        throw InputError("checkpoint vocabulary hash " + ck.vocab_hash + " differs from " + cfg.data_dir +
                         "/vocab.tsv (" + vocab.hash() + ")");
    return ck;
}

std::vector<ConversationInstance> read_split(const RunConfig& cfg, const char* name) {
    fs::path p = fs::path(cfg.data_dir) / (std::string(name) + ".jsonl");
    if (!fs::exists(p)) throw InputError("missing " + p.string() + "; run preprocess first");
    return read_instances_jsonl(p.string());
}

ordered_json history_json(const TrainHistory& h) {
    ordered_json j;
    j["epochs_run"] = h.epochs.size();
    j["best_epoch"] = h.best_epoch;
    j["stopped_early"] = h.stopped_early;
    j["diverged"] = h.diverged;
    if (h.diverged) j["divergence_reason"] = h.divergence_reason;
    if (h.best_epoch > 0) {
        const auto& dev = h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].dev;
        j["best_dev"] = {{"l_z", dev.l_z}, {"l_d", dev.l_d}, {"l_x", dev.l_x}, {"l_mi", dev.l_mi}, {"total", dev.total}};
    }
    return j;
}

fs::path checkpoint_path(const RunConfig& cfg, const fs::path& dir) {
    return cfg.out.empty() ? dir / "model.ckpt" : fs::path(cfg.out);
}

fs::path history_path(const fs::path& ckpt) {
    fs::path h = ckpt;
    h.replace_extension(".history.csv");
    return h;
}

Dataset load_dataset(const RunConfig& cfg, const Vocabulary& vocab) {
    Dataset data{make_examples(read_split(cfg, "train"), vocab, cfg.context_excludes_target),
                 make_examples(read_split(cfg, "dev"), vocab, cfg.context_excludes_target), vocab.stop_flags()};
    if (data.train.empty()) throw InputError("empty corpus: no training examples in " + cfg.data_dir);
    return data;
}

// ---- commands ----------------------------------------------------------------

void cmd_preprocess(const RunConfig& cfg, std::ostream& log) {
    require(cfg.input, "input");
    auto dir = prepare_out_dir(cfg);
    auto posts = read_posts_jsonl(cfg.input);
    if (posts.empty()) throw InputError("empty corpus: no posts in " + cfg.input);
    auto instances = build_instances(posts);
    std::set<std::string> stop;
    if (!cfg.stop_list.empty()) stop = load_word_list(cfg.stop_list);
    auto split = split_dataset(instances, {cfg.train_ratio, cfg.dev_ratio, cfg.test_ratio}, cfg.seed);
    // The vocabulary comes from the training split only.
    auto vocab = build_vocabulary(split.train, cfg.min_count, stop);
    if (vocab.empty()) throw InputError("empty vocabulary: no word reaches min_count " + std::to_string(cfg.min_count));
    save_vocabulary_tsv(vocab, (dir / "vocab.tsv").string());
    write_instances_jsonl(split.train, (dir / "train.jsonl").string());
    write_instances_jsonl(split.dev, (dir / "dev.jsonl").string());
    write_instances_jsonl(split.test, (dir / "test.jsonl").string());
    std::size_t stop_words = 0;
    for (bool s : vocab.stop_flags()) stop_words += s;
    ordered_json j;
    j["posts"] = posts.size();
    j["instances"] = instances.size();
    j["train_instances"] = split.train.size();
    j["dev_instances"] = split.dev.size();
    j["test_instances"] = split.test.size();
    j["vocab_size"] = vocab.size();
    j["stop_words"] = stop_words;
    j["vocab_hash"] = vocab.hash();
    write_json(j, dir / "preprocess.json");
    log << "preprocess: " << posts.size() << " posts, " << instances.size() << " instances, vocabulary "
        << vocab.size() << '\n';
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto dir = prepare_out_dir(cfg);
    Dataset data = load_dataset(cfg, vocab);
    ModelConfig mc = cfg.model;
    mc.vocab_size = static_cast<int>(vocab.size());
    TrainConfig tc = cfg.train;
    tc.on_epoch = [&](int e, const LossBreakdown& tr, const LossBreakdown& dv) {
        log << "epoch " << e << " train " << tr.total << " dev " << dv.total << '\n';
    };
    auto result = train(data, mc, tc);
    auto ckpt = checkpoint_path(cfg, dir);
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    save_checkpoint(result.params, mc, vocab.hash(), ckpt.string());
    write_history_csv(result.history, history_path(ckpt).string());
    write_json(history_json(result.history), dir / "train.json");
    log << "train: best epoch " << result.history.best_epoch << ", checkpoint " << ckpt.string() << '\n';
    if (result.history.diverged) throw NumericError("training diverged: " + result.history.divergence_reason);
}

void cmd_grid(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto dir = prepare_out_dir(cfg);
    Dataset data = load_dataset(cfg, vocab);
    ModelConfig mc = cfg.model;
    mc.vocab_size = static_cast<int>(vocab.size());
    Grid grid;
    auto add = [&](const std::string& list, const char* key, const char* flag) {
        if (!list.empty()) grid[key] = parse_double_list(list, flag);
    };
    add(cfg.grid_lambda, "lambda", "grid_lambda");
    add(cfg.grid_learning_rate, "learning_rate", "grid_learning_rate");
    add(cfg.grid_topics, "topics", "grid_topics");
    add(cfg.grid_discourse, "discourse", "grid_discourse");
    add(cfg.grid_seed, "seed", "grid_seed");
    if (grid.empty()) throw UsageError("grid has no values; set at least one --grid-* list");
    auto result = grid_search(data, mc, cfg.train, grid);
    write_grid_csv(result, (dir / "grid.csv").string());
    auto ckpt = checkpoint_path(cfg, dir);
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    save_checkpoint(result.best_result.params, result.best_model, vocab.hash(), ckpt.string());
    write_history_csv(result.best_result.history, history_path(ckpt).string());
    ordered_json j;
    j["cells"] = result.cells.size();
    j["best_cell"] = result.best_index;
    j["best_values"] = result.cells[result.best_index].values;
    j["best"] = history_json(result.best_result.history);
    write_json(j, dir / "grid.json");
    log << "grid: " << result.cells.size() << " cells, best cell " << result.best_index << '\n';
}

std::vector<std::vector<std::string>> word_lists(const TopicSummary& s) {
    std::vector<std::vector<std::string>> out;
    for (const auto& row : s.rows) {
        out.emplace_back();
        for (const auto& w : row) out.back().push_back(w.word);
    }
    return out;
}

void write_top_words(const TopicSummary& s, const fs::path& path) {
    auto out = open_out(path);
    for (std::size_t k = 0; k < s.rows.size(); ++k) {
        out << k;
        for (const auto& w : s.rows[k]) out << '\t' << w.word << ':' << w.prob;
        out << '\n';
    }
}

ordered_json coherence_json(const CoherenceReport& r) {
    ordered_json per = ordered_json::array();
    for (double v : r.per_topic) per.push_back(std::isnan(v) ? ordered_json(nullptr) : ordered_json(v));
    return {{"per_topic", per}, {"mean", r.mean}, {"scored_pairs", r.scored_pairs}, {"skipped_pairs", r.skipped_pairs}};
}

void cmd_eval_topics(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto ck = load_model(cfg, vocab);
    auto dir = prepare_out_dir(cfg);
    if (cfg.top_n < 2) throw UsageError("--top-n must be at least 2 for coherence");
    auto ref_instances = cfg.ref.empty() ? read_split(cfg, "train") : read_instances_jsonl(cfg.ref);
    std::vector<TokenList> reference;
    for (const auto& inst : ref_instances) {
        TokenList doc;
        for (const auto& m : inst.messages) doc.insert(doc.end(), m.begin(), m.end());
        reference.push_back(std::move(doc));
    }
    Mat phi_t = topic_word_matrix(ck.params), phi_d = discourse_word_matrix(ck.params);
    auto n = static_cast<std::size_t>(cfg.top_n);
    auto topics = top_n_words(phi_t, vocab, n, cfg.exclude_stop);
    auto roles = top_n_words(phi_d, vocab, n, cfg.exclude_stop);
    write_top_words(topics, dir / "topic_top_words.tsv");
    write_top_words(roles, dir / "discourse_top_words.tsv");

    auto window = static_cast<std::size_t>(cfg.window);
    ordered_json j;
    j["top_n"] = cfg.top_n;
    j["window"] = cfg.window;
    j["reference_documents"] = reference.size();
    auto full = word_lists(topics);
    std::vector<double> means;
    std::vector<std::size_t> cuts;
    if (n > 5) cuts.push_back(5);
    cuts.push_back(n);
    for (std::size_t cut : cuts) {
        auto lists = full;
        for (auto& l : lists) l.resize(std::min(l.size(), cut));
        auto r = npmi_coherence(lists, reference, window);
        j["npmi_top" + std::to_string(cut)] = coherence_json(r);
        means.push_back(r.mean);
    }
    double avg = 0;
    for (double m : means) avg += m;
    j["npmi_mean_over_cutoffs"] = avg / static_cast<double>(means.size());
    j["topic_discourse_js"] = mean_topic_discourse_js(phi_t, phi_d);
    write_json(j, dir / "topics_report.json");
    log << "eval-topics: NPMI mean " << j["npmi_mean_over_cutoffs"].get<double>() << '\n';
}

/// Messages of a posts file, each once, with its first conversation path.
struct MessageRef {
    const ConversationInstance* inst;
    std::size_t pos;
};

std::vector<MessageRef> unique_messages(const std::vector<ConversationInstance>& instances) {
    std::set<std::string> seen;
    std::vector<MessageRef> out;
    for (const auto& inst : instances)
        for (std::size_t m = 0; m < inst.size(); ++m)
            if (seen.insert(inst.ids[m]).second) out.push_back({&inst, m});
    return out;
}

void cmd_eval_disc(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto ck = load_model(cfg, vocab);
    require(cfg.labeled, "labeled");
    auto dir = prepare_out_dir(cfg);
    auto instances = build_instances(read_posts_jsonl(cfg.labeled));
    std::map<std::string, int> label_ids;
    std::vector<std::pair<MessageRef, std::string>> items;
    for (const auto& ref : unique_messages(instances)) {
        const auto& label = ref.inst->labels[ref.pos];
        if (!label) continue;
        label_ids.emplace(*label, 0);
        items.emplace_back(ref, *label);
    }
    if (items.empty()) throw InputError("no labeled messages in " + cfg.labeled);
    int next = 0;
    for (auto& [name, id] : label_ids) id = next++;
    std::vector<int> assign, gold;
    for (const auto& [ref, label] : items) {
        Vec pi = encode_discourse(vectorize(ref.inst->messages[ref.pos], vocab), ck.params);
        assign.push_back(static_cast<int>(argmax(pi)));
        gold.push_back(label_ids.at(label));
    }
    auto scores = cluster_scores(assign, gold);
    const auto roles = static_cast<std::size_t>(ck.config.roles);
    auto heat = alignment_matrix(assign, gold, roles, label_ids.size());
    auto out = open_out(dir / "heatmap.csv");
    out << "label";
    for (std::size_t r = 0; r < roles; ++r) out << ",role" << r;
    out << '\n';
    for (const auto& [name, id] : label_ids) {
        out << name;
        for (std::size_t r = 0; r < roles; ++r) out << ',' << heat.fractions(id, static_cast<Eigen::Index>(r));
        out << '\n';
    }
    ordered_json j;
    j["messages"] = items.size();
    j["labels"] = label_ids.size();
    j["roles"] = roles;
    j["purity"] = scores.purity;
    j["homogeneity"] = scores.homogeneity;
    j["variation_of_information"] = scores.vi;
    write_json(j, dir / "disc_report.json");
    log << "eval-disc: purity " << scores.purity << " homogeneity " << scores.homogeneity << " VI " << scores.vi
        << '\n';
}

std::map<std::string, std::string> load_merge_map(const std::string& path) {
    std::map<std::string, std::string> out;
    if (path.empty()) return out;
    std::ifstream in(path);
    if (!in) throw InputError("cannot read merge map " + path);
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw InputError(path + ":" + std::to_string(n) + ": expected 'from<TAB>to'");
        auto lower = [](std::string s) {
            for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            return s;
        };
        out[lower(line.substr(0, tab))] = lower(line.substr(tab + 1));
    }
    return out;
}

ordered_json metrics_json(const ClassificationMetrics& m, const std::vector<std::string>& classes) {
    ordered_json per;
    for (std::size_t k = 0; k < classes.size(); ++k) per[classes[k]] = m.per_class_f1[k];
    return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"per_class_f1", per}};
}

void cmd_classify(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto ck = load_model(cfg, vocab);
    require(cfg.labeled, "labeled");
    const std::string mode = cfg.mode;
    if (mode != "features" && mode != "separate" && mode != "joint" && mode != "cnn")
        throw UsageError("invalid value for mode: '" + mode + "' (expected features, separate, joint or cnn)");
    if (cfg.top_k < 1) throw UsageError("--top-k must be positive");
    auto dir = prepare_out_dir(cfg);

    auto instances = build_instances(read_posts_jsonl(cfg.labeled));
    HashtagLabelOptions opts;
    opts.merge_map = load_merge_map(cfg.merge_map);
    if (!cfg.block_list.empty()) opts.block_list = load_word_list(cfg.block_list);
    opts.top_k = static_cast<std::size_t>(cfg.top_k);
    auto classified = build_hashtag_labels(instances, opts);
    for (const auto& w : classified.warnings) log << "warning: " << w << '\n';
    auto data = make_labeled_data(instances, classified, vocab);
    if (cfg.context_excludes_target)
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& msg = classified.messages[i];
            data.c[i] = vectorize(instances[msg.instance], vocab, msg.position);
        }

    ordered_json j;
    j["mode"] = mode;
    j["messages"] = data.size();
    j["classes"] = classified.classes;
    ClassificationMetrics main;
    if (mode == "features") {
        SvmOptions svm;
        svm.c = cfg.svm_c;
        auto feats = train_classifier(to_sparse(topic_discourse_features(data, ck.params)), data.labels,
                                      data.n_classes, cfg.seed, svm);
        auto bow = train_classifier(bow_features(data), data.labels, data.n_classes, cfg.seed, svm);
        j["train_messages"] = feats.n_train;
        j["test_messages"] = feats.n_test;
        j["topic_discourse_features"] = metrics_json(feats.metrics, classified.classes);
        j["bow_features"] = metrics_json(bow.metrics, classified.classes);
        main = feats.metrics;
    } else {
        ModelParameters params = ck.params;
        auto report = joint_train(data, params, ck.config, vocab.stop_flags(), cfg.cnn, parse_train_mode(mode),
                                  cfg.seed);
        j["train_messages"] = report.n_train;
        j["test_messages"] = report.n_test;
        j["metrics"] = metrics_json(report.metrics, classified.classes);
        j["epoch_cross_entropy"] = report.epoch_cross_entropy;
        main = report.metrics;
    }
    write_json(j, dir / "classify_metrics.json");
    auto out = open_out(dir / "per_class_f1.csv");
    out << "class,f1\n";
    for (std::size_t k = 0; k < classified.classes.size(); ++k)
        out << classified.classes[k] << ',' << main.per_class_f1[k] << '\n';
    log << "classify (" << mode << "): accuracy " << main.accuracy << " macro-F1 " << main.macro_f1 << '\n';
}

void cmd_export_top_words(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto ck = load_model(cfg, vocab);
    if (cfg.top_n < 1) throw UsageError("--top-n must be positive");
    auto dir = prepare_out_dir(cfg);
    auto n = static_cast<std::size_t>(cfg.top_n);
    auto topics = top_n_words(topic_word_matrix(ck.params), vocab, n, cfg.exclude_stop);
    auto roles = top_n_words(discourse_word_matrix(ck.params), vocab, n, cfg.exclude_stop);
    auto out = open_out(dir / "top_words.tsv");
    auto emit = [&](const TopicSummary& s, const char* kind) {
        for (std::size_t k = 0; k < s.rows.size(); ++k) {
            out << kind << '\t' << k << '\t';
            for (std::size_t i = 0; i < s.rows[k].size(); ++i) out << (i ? " " : "") << s.rows[k][i].word;
            out << '\n';
        }
    };
    emit(topics, "topic");
    emit(roles, "discourse");
    log << "export-top-words: " << topics.rows.size() + roles.rows.size() << " rows\n";
}

void cmd_attribute(const RunConfig& cfg, std::ostream& log) {
    auto vocab = load_data_vocab(cfg);
    auto ck = load_model(cfg, vocab);
    require(cfg.input, "input");
    auto dir = prepare_out_dir(cfg);
    auto instances = build_instances(read_posts_jsonl(cfg.input));
    auto out = open_out(dir / "attribution.tsv");
    out << "message_id\tposition\ttoken\tsource\tp_topic\tp_discourse\n";
    std::size_t n = 0;
    for (const auto& ref : unique_messages(instances)) {
        const auto& tokens = ref.inst->messages[ref.pos];
        auto inf = infer(vectorize(tokens, vocab), vectorize(*ref.inst, vocab), ck.params);
        auto tags = word_attribution(tokens, vocab, inf.theta, inf.d_hard, ck.params);
        for (std::size_t i = 0; i < tags.size(); ++i) {
            out << ref.inst->ids[ref.pos] << '\t' << i << '\t' << tags[i].token << '\t' << to_string(tags[i].source)
                << '\t' << tags[i].p_topic << '\t' << tags[i].p_discourse << '\n';
        }
        ++n;
    }
    log << "attribute: " << n << " messages\n";
}

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
    auto dir = prepare_out_dir(cfg);
    PlantedSpec spec;
    spec.conversations = cfg.synth_conversations;
    spec.topics = cfg.synth_topics;
    spec.roles = cfg.synth_roles;
    spec.vocab_size = cfg.synth_vocab;
    spec.hashtag_rate = cfg.hashtag_rate;
    spec.hashtag_noise = cfg.hashtag_noise;
    spec.seed = cfg.seed;
    auto pc = generate_planted(spec);
    write_posts_jsonl(pc.posts, (dir / "posts.jsonl").string());
    auto out = open_out(dir / "planted_top_words.tsv");
    auto emit = [&](const Mat& m, const char* kind) {
        for (Eigen::Index k = 0; k < m.rows(); ++k) {
            out << kind << '\t' << k << '\t';
            auto idx = top_indices(m.row(k).transpose(), 10);
            for (std::size_t i = 0; i < idx.size(); ++i) out << (i ? " " : "") << pc.words[idx[i]];
            out << '\n';
        }
    };
    emit(pc.topic_word, "topic");
    emit(pc.role_word, "discourse");
    log << "synth: " << pc.posts.size() << " posts\n";
}

}  // namespace

void run_command(const RunConfig& cfg, std::ostream& log) {
    const std::string& c = cfg.command;
    if (c == "preprocess") cmd_preprocess(cfg, log);
    else if (c == "train") cmd_train(cfg, log);
    else if (c == "grid") cmd_grid(cfg, log);
    else if (c == "eval-topics") cmd_eval_topics(cfg, log);
    else if (c == "eval-disc") cmd_eval_disc(cfg, log);
    else if (c == "classify") cmd_classify(cfg, log);
    else if (c == "export-top-words") cmd_export_top_words(cfg, log);
    else if (c == "attribute") cmd_attribute(cfg, log);
    else if (c == "synth") cmd_synth(cfg, log);
    else throw UsageError("unknown command: " + c);
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    const std::string command = args.empty() ? "" : args.front();
    auto fail = [&](const std::string& message, int status) {
        nlohmann::json j;
        j["error"] = message;
        j["command"] = command;
        j["status"] = status;
        err << j.dump() << '\n';
        return status;
    };
    RunConfig cfg;
    try {
        cfg = parse_and_resolve(args);
    } catch (const HelpRequested& h) {
        out << h.what();
        return 0;
    } catch (const UsageError& e) {
        return fail(e.what(), 2);
    }
    try {
        run_command(cfg, out);
    } catch (const UsageError& e) {
        return fail(e.what(), 2);
    } catch (const std::exception& e) {
        return fail(e.what(), 1);
    }
    return 0;
}

}  // namespace convotd
