#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/config.hpp"
#include "persona/corpus.hpp"
#include "persona/errors.hpp"
#include "persona/eval.hpp"
#include "persona/generator.hpp"
#include "persona/jsonl.hpp"
#include "persona/prm.hpp"
#include "persona/scoring/backends.hpp"
#include "persona/scoring/bm25.hpp"
#include "persona/scoring/pair_classifier.hpp"

namespace persona::pipeline {

namespace fs = std::filesystem;
using jsonl::Json;

enum class Stage { build_dataset, train_scorer, train_generator, retrieve, generate, evaluate, pipeline };

inline std::string to_string(Stage s)
{
    switch (s) {
    case Stage::build_dataset:
        return "build-dataset";
    case Stage::train_scorer:
        return "train-scorer";
    case Stage::train_generator:
        return "train-generator";
    case Stage::retrieve:
        return "retrieve";
    case Stage::generate:
        return "generate";
    case Stage::evaluate:
        return "evaluate";
    case Stage::pipeline:
        return "pipeline";
    }
    return {};
}

inline Stage parse_stage(const std::string& s)
{
    for (auto st : {Stage::build_dataset, Stage::train_scorer, Stage::train_generator, Stage::retrieve, Stage::generate,
                    Stage::evaluate, Stage::pipeline}) {
        if (to_string(st) == s) {
            return st;
        }
    }
    throw ArgumentError("unknown stage '" + s + "'");
}

struct StageOptions {
    std::optional<prm::Strategy> strategy;  // retrieve: overrides retrieval.strategy
    bool with_prm = false;                  // generate: extend each profile with the retrieved persona
    bool force = false;                     // evaluate: accept artifacts from another config
};

/// Artifact file names inside a run directory.
namespace files {
inline const char* const train = "train.jsonl";
inline const char* const test = "test.jsonl";
inline const char* const collection = "collection.jsonl";
inline const char* const stats = "stats.json";
inline const char* const scorer = "scorer.json";
inline const char* const checkpoint = "checkpoint.json";
inline const char* const trace = "trace.json";
inline const char* const ranked = "ranked.jsonl";
inline const char* const predictions = "predictions.jsonl";
inline const char* const report = "report.jsonl";
inline const char* const table = "report.txt";
inline const char* const manifest = "manifest.json";
}  // namespace files

namespace detail {

inline void write_json(const fs::path& path, const Json& j)
{
    std::ofstream out(path);
    out << j.dump(1) << '\n';
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

inline Json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ArgumentError("cannot open " + path.string());
    }
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(path.string() + " is not JSON: " + e.what());
    }
}

inline std::string timestamp()
{
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

/// Trims a profile (and its labels) to the model's persona capacity.
inline void cap_profile(DialogueExample& ex, std::size_t cap)
{
    if (ex.profile.size() <= cap) {
        return;
    }
    std::cerr << "warning: profile of " << ex.profile.size() << " personas truncated to " << cap << '\n';
    Profile kept;
    for (std::size_t i = 0; i < cap; ++i) {
        kept.add(ex.profile[i].text);
    }
    ex.profile = std::move(kept);
    if (ex.persona_labels) {
        ex.persona_labels->resize(cap);
    }
}

}  // namespace detail

/// A stage run directory that only becomes visible under its final name on commit().
class RunDir {
  public:
    RunDir(const fs::path& stage_root)
    {
        fs::create_directories(stage_root);
        auto stamp = detail::timestamp();
        for (int n = 0; n < 100; ++n) {
            char suffix[8];
            std::snprintf(suffix, sizeof suffix, "-%02d", n);
            auto name = stamp + suffix;
            if (!fs::exists(stage_root / name) && !fs::exists(stage_root / (".tmp-" + name))) {
                m_final = stage_root / name;
                m_tmp = stage_root / (".tmp-" + name);
                break;
            }
        }
        if (m_final.empty()) {
            throw std::runtime_error("too many runs of one stage within a second under " + stage_root.string());
        }
        fs::create_directory(m_tmp);
    }

    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    ~RunDir()
    {
        if (!m_committed) {
            std::error_code ec;
            fs::remove_all(m_tmp, ec);
        }
    }

    fs::path operator/(const std::string& file) const { return m_tmp / file; }

    fs::path commit()
    {
        fs::rename(m_tmp, m_final);
        m_committed = true;
        return m_final;
    }

  private:
    fs::path m_tmp;
    fs::path m_final;
    bool m_committed = false;
};

class Pipeline {
  public:
    explicit Pipeline(config::PipelineConfig cfg, std::ostream& log = std::cerr)
        : m_cfg(std::move(cfg)), m_log(log)
    {
        config::validate(m_cfg);
    }

    const config::PipelineConfig& config() const noexcept { return m_cfg; }

    /// Runs one stage (or all of them) and returns the last committed run directory.
    fs::path run(Stage stage, const StageOptions& opts = {})
    {
        switch (stage) {
        case Stage::build_dataset:
            return build_dataset();
        case Stage::train_scorer:
            return train_scorer();
        case Stage::train_generator:
            return train_generator();
        case Stage::retrieve:
            return retrieve(opts);
        case Stage::generate:
            return generate(opts);
        case Stage::evaluate:
            return evaluate(opts);
        case Stage::pipeline: {
            build_dataset();
            if (m_cfg.relevance == config::trained_relevance) {
                train_scorer();
            }
            train_generator();
            retrieve(opts);
            auto gen = opts;
            gen.with_prm = true;
            generate(gen);
            return evaluate(opts);
        }
        }
        throw ArgumentError("unknown stage");
    }

    /// Most recent committed run of a stage; DependencyError when there is none.
    fs::path latest(Stage stage) const
    {
        auto root = m_cfg.out / to_string(stage);
        std::optional<std::string> best;
        if (fs::is_directory(root)) {
            for (const auto& entry : fs::directory_iterator(root)) {
                auto name = entry.path().filename().string();
                if (entry.is_directory() && name.front() != '.' && (!best || name > *best)) {
                    best = name;
                }
            }
        }
        if (!best) {
            throw DependencyError(to_string(stage), "no " + to_string(stage) + " artifacts under " + root.string());
        }
        return root / *best;
    }

  private:
    jsonl::Meta meta(jsonl::Schema s) const { return {jsonl::to_string(s), hash(), m_cfg.seed}; }

    std::string hash() const { return config::config_hash(m_cfg); }

    Json provenance() const { return Json{{"config_hash", hash()}, {"seed", m_cfg.seed}}; }

    fs::path finish(RunDir& dir, Stage stage, const std::map<std::string, fs::path>& inputs, Json extra = Json::object())
    {
        Json m;
        m["stage"] = to_string(stage);
        m["_meta"] = provenance();
        m["inputs"] = Json::object();
        for (const auto& [k, v] : inputs) {
            m["inputs"][k] = v.string();
        }
        m["options"] = std::move(extra);
        detail::write_json(dir / files::manifest, m);
        std::ofstream(dir / "config.txt") << config::save(m_cfg);
        auto out = dir.commit();
        m_log << to_string(stage) << ": wrote " << out.string() << '\n';
        return out;
    }

    std::vector<DialogueExample> read_dialogues(const fs::path& path) const
    {
        std::vector<DialogueExample> out;
        for (const auto& rec : jsonl::read_all(path, jsonl::Schema::dialogue)) {
            out.push_back(jsonl::dialogue_from_record(rec));
        }
        return out;
    }

    GlobalPersonaCollection read_collection(const fs::path& path) const
    {
        GlobalPersonaCollection c;
        for (const auto& rec : jsonl::read_all(path, jsonl::Schema::collection)) {
            auto id = c.add(text::tokenize(rec.at("text").get<std::string>()));
            if (id != rec.at("id").get<std::size_t>()) {
                throw SchemaError(0, "id", "collection ids must be dense and in first-seen order");
            }
        }
        return c;
    }

    // ---- stages ---------------------------------------------------------------------------

    fs::path build_dataset()
    {
        std::ifstream in(m_cfg.corpus);
        if (!in) {
            throw ArgumentError("cannot open corpus " + m_cfg.corpus.string());
        }
        auto parsed = parse_convai2(in);
        if (parsed.examples.empty()) {
            throw ArgumentError("corpus " + m_cfg.corpus.string() + " holds no dialogue turns");
        }

        std::vector<std::size_t> ids;
        for (const auto& ex : parsed.examples) {
            if (ids.empty() || ids.back() != ex.dialogue_id) {
                ids.push_back(ex.dialogue_id);
            }
        }
        if (ids.size() < 2) {
            throw ArgumentError("the train/test split needs at least two dialogues");
        }
        std::mt19937_64 rng(m_cfg.seed);
        std::shuffle(ids.begin(), ids.end(), rng);
        auto n_test = static_cast<std::size_t>(std::lround(m_cfg.test_fraction * static_cast<double>(ids.size())));
        n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
        std::set<std::size_t> test_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));

        std::vector<DialogueExample> train;
        std::vector<DialogueExample> test_dialogues;
        for (const auto& ex : parsed.examples) {
            (test_ids.count(ex.dialogue_id) ? test_dialogues : train).push_back(ex);
        }
        auto tfidf = fit_tfidf(parsed.examples);
        label_personas(train, tfidf, m_cfg.tfidf_threshold);
        auto it = build_it_convai2(test_dialogues, tfidf, m_cfg.tfidf_threshold);
        if (it.examples.empty()) {
            throw ArgumentError("no test example asks for a persona its response links to; lower tfidf.threshold or "
                                "use a larger corpus");
        }

        GlobalPersonaCollection collection;
        if (!m_cfg.collection.empty()) {
            std::ifstream cin(m_cfg.collection);
            if (!cin) {
                throw ArgumentError("cannot open collection corpus " + m_cfg.collection.string());
            }
            collection = build_global_collection(parse_convai2(cin).examples);
        } else {
            collection = build_global_collection(test_dialogues);
        }

        RunDir dir(m_cfg.out / to_string(Stage::build_dataset));
        {
            std::ofstream out(dir / files::train);
            jsonl::Writer w(out, jsonl::Schema::dialogue, meta(jsonl::Schema::dialogue));
            for (const auto& ex : train) {
                w.write(jsonl::to_record(ex));
            }
        }
        {
            std::ofstream out(dir / files::test);
            jsonl::Writer w(out, jsonl::Schema::dialogue, meta(jsonl::Schema::dialogue));
            for (const auto& ex : it.examples) {
                w.write(jsonl::to_record(ex));
            }
        }
        {
            std::ofstream out(dir / files::collection);
            jsonl::Writer w(out, jsonl::Schema::collection, meta(jsonl::Schema::collection));
            for (const auto& p : collection.personas()) {
                w.write(Json{{"id", p.id}, {"text", p.str()}});
            }
        }
        Json stats;
        stats["_meta"] = provenance();
        stats["dialogues"] = ids.size();
        stats["skipped_dialogues"] = parsed.skipped_dialogues;
        stats["train_examples"] = train.size();
        stats["test_dialogue_examples"] = test_dialogues.size();
        stats["test_examples"] = it.examples.size();
        stats["dropped_not_persona_query"] = it.not_persona_query;
        stats["dropped_no_linked_persona"] = it.no_linked_persona;
        stats["dropped_emptied_profile"] = it.emptied_profile;
        stats["collection"] = collection.size();
        detail::write_json(dir / files::stats, stats);
        m_log << "build-dataset: " << train.size() << " train, " << it.examples.size() << " test, "
              << collection.size() << " collection personas\n";
        return finish(dir, Stage::build_dataset, {});
    }

    fs::path train_scorer()
    {
        auto data = latest(Stage::build_dataset);
        std::vector<scoring::PairExample> pairs;
        for (const auto& ex : read_dialogues(data / files::train)) {
            for (std::size_t i = 0; i < ex.profile.size(); ++i) {
                pairs.push_back({ex.query, ex.profile[i].text, (*ex.persona_labels)[i]});
            }
        }
        scoring::PairClassifierConfig pc;
        pc.seed = m_cfg.seed;
        auto model = scoring::PairClassifier::train(pairs, pc);

        RunDir dir(m_cfg.out / to_string(Stage::train_scorer));
        auto j = model.to_json();
        j["_meta"] = provenance();
        detail::write_json(dir / files::scorer, j);
        m_log << "train-scorer: " << pairs.size() << " labelled pairs\n";
        return finish(dir, Stage::train_scorer, {{"build-dataset", data}});
    }

    fs::path train_generator()
    {
        auto data = latest(Stage::build_dataset);
        auto train = read_dialogues(data / files::train);
        auto collection = read_collection(data / files::collection);
        auto test = read_dialogues(data / files::test);

        std::vector<Tokens> extra;
        for (const auto& p : collection.personas()) {
            extra.push_back(p.text);
        }
        for (const auto& ex : test) {
            extra.push_back(ex.query);
        }
        auto vocab = model::build_vocabulary(train, extra);

        auto mc = m_cfg.model;
        mc.vocab_size = static_cast<int>(vocab.size());
        mc.max_decode_len = static_cast<int>(m_cfg.decode_max_len);
        mc.seed = m_cfg.seed;
        model::GeneratorModel m(mc);

        std::vector<model::EncodedExample> encoded;
        for (auto ex : train) {
            detail::cap_profile(ex, static_cast<std::size_t>(mc.max_personas));
            encoded.push_back(model::encode_example(vocab, mc, ex));
        }

        model::TrainConfig tc;
        tc.steps = m_cfg.train_steps;
        tc.batch = m_cfg.train_batch;
        tc.lr = m_cfg.train_lr;
        tc.clip_norm = m_cfg.train_clip;
        tc.seed = m_cfg.seed;
        tc.loss = m_cfg.loss;
        tc.loss.ablation = m_cfg.ablation;
        const std::size_t every = std::max<std::size_t>(1, tc.steps / 10);
        tc.on_step = [&](std::size_t step, const model::LossBreakdown& l) {
            if ((step + 1) % every == 0) {
                m_log << "train-generator: step " << step + 1 << "/" << tc.steps << " loss " << l.total << " nll "
                      << l.l3 << '\n';
            }
        };
        auto result = model::train(m, encoded, tc);

        RunDir dir(m_cfg.out / to_string(Stage::train_generator));
        model::Checkpoint ck{std::move(m), std::move(vocab), m_cfg.ablation};
        auto j = ck.to_json();
        j["_meta"] = provenance();
        detail::write_json(dir / files::checkpoint, j);

        Json trace;
        trace["_meta"] = provenance();
        for (const char* k : {"l1", "l2", "l3", "total"}) {
            trace[k] = Json::array();
        }
        for (const auto& l : result.trace) {
            trace["l1"].push_back(l.l1);
            trace["l2"].push_back(l.l2);
            trace["l3"].push_back(l.l3);
            trace["total"].push_back(l.total);
        }
        detail::write_json(dir / files::trace, trace);
        return finish(dir, Stage::train_generator, {{"build-dataset", data}});
    }

    fs::path retrieve(const StageOptions& opts)
    {
        auto rc = m_cfg.retrieval;
        if (opts.strategy) {
            rc.strategy = *opts.strategy;
        }
        auto data = latest(Stage::build_dataset);
        std::map<std::string, fs::path> inputs{{"build-dataset", data}};

        std::unique_ptr<scoring::NliBackend> nli =
            scoring::make_nli_backend(scoring::ScoringBackendSpec::parse(m_cfg.prm_nli));
        if (m_cfg.memo) {
            fs::create_directories(m_cfg.out);
            nli = std::make_unique<scoring::MemoNliBackend>(std::move(nli), m_cfg.out / "nli_memo.jsonl");
        }
        std::unique_ptr<scoring::RelevanceBackend> relevance;
        if (m_cfg.relevance == config::trained_relevance) {
            auto scorer = latest(Stage::train_scorer);
            inputs["train-scorer"] = scorer;
            relevance = std::make_unique<scoring::PairClassifier>(
                scoring::PairClassifier::from_json(detail::read_json(scorer / files::scorer)));
        } else {
            relevance = scoring::make_relevance_backend(scoring::ScoringBackendSpec::parse(m_cfg.relevance));
        }

        auto collection = read_collection(data / files::collection);
        scoring::Bm25Index bm25(collection);
        prm::Backends backends{*nli, *relevance, &bm25};

        RunDir dir(m_cfg.out / to_string(Stage::retrieve));
        std::ofstream out(dir / files::ranked);
        jsonl::Writer w(out, jsonl::Schema::ranked, meta(jsonl::Schema::ranked));
        for (const auto& ex : read_dialogues(data / files::test)) {
            auto res = prm::retrieve(ex.query, ex.profile, collection, rc, backends);
            Json rec;
            rec["query"] = text::join(ex.query);
            rec["chosen"] = res.chosen.str();
            rec["candidates"] = Json::array();
            for (const auto& c : res.ranked) {
                rec["candidates"].push_back(
                    Json{{"text", c.persona.str()}, {"r", c.r}, {"e", c.e}, {"c", c.c}, {"s", c.s}, {"rank", c.rank}});
            }
            w.write(rec);
        }
        out.close();
        m_log << "retrieve: " << w.count() << " queries ranked with " << prm::to_string(rc.strategy) << '\n';
        return finish(dir, Stage::retrieve, inputs, Json{{"strategy", prm::to_string(rc.strategy)}});
    }

    fs::path generate(const StageOptions& opts)
    {
        auto data = latest(Stage::build_dataset);
        auto gen = latest(Stage::train_generator);
        std::map<std::string, fs::path> inputs{{"build-dataset", data}, {"train-generator", gen}};
        auto test = read_dialogues(data / files::test);

        std::vector<std::optional<std::string>> extension(test.size());
        if (opts.with_prm) {
            auto ranked_dir = latest(Stage::retrieve);
            inputs["retrieve"] = ranked_dir;
            auto ranked = jsonl::read_all(ranked_dir / files::ranked, jsonl::Schema::ranked);
            if (ranked.size() != test.size()) {
                throw DependencyError("retrieve", "ranked output does not cover the current test set");
            }
            for (std::size_t i = 0; i < test.size(); ++i) {
                if (ranked[i].at("query").get<std::string>() != text::join(test[i].query)) {
                    throw DependencyError("retrieve", "ranked output does not match the current test set");
                }
                extension[i] = ranked[i].at("chosen").get<std::string>();
            }
        }

        auto ck = model::Checkpoint::load(gen / files::checkpoint);
        const auto& mc = ck.model.config();
        model::DecodeConfig dc;
        dc.max_len = m_cfg.decode_max_len;
        dc.beam = m_cfg.decode_beam;
        dc.uniform_weights = ck.ablation == model::Ablation::no_scorer;

        RunDir dir(m_cfg.out / to_string(Stage::generate));
        std::ofstream out(dir / files::predictions);
        jsonl::Writer w(out, jsonl::Schema::prediction, meta(jsonl::Schema::prediction));
        const auto cap = static_cast<std::size_t>(mc.max_personas) - (extension.front() ? 1 : 0);
        for (std::size_t i = 0; i < test.size(); ++i) {
            auto ex = test[i];
            detail::cap_profile(ex, cap);
            std::vector<std::vector<int>> personas;
            for (const auto& p : ex.profile.personas()) {
                personas.push_back(model::detail::clip_segment(ck.vocab.encode(p.text), mc.max_len, "persona"));
            }
            if (extension[i]) {
                personas.push_back(
                    model::detail::clip_segment(ck.vocab.encode(text::tokenize(*extension[i])), mc.max_len, "persona"));
            }
            auto query = model::detail::clip_segment(ck.vocab.encode(ex.query), mc.max_len, "query");
            auto g = model::generate(ck.model, personas, query, dc);
            Json rec;
            rec["query"] = text::join(ex.query);
            rec["profile"] = ex.profile.strings();
            rec["extended_persona"] = extension[i] ? Json(*extension[i]) : Json(nullptr);
            rec["response"] = text::join(ck.vocab.decode(g.ids));
            rec["w_pri"] = g.w_pri;
            rec["reference"] = text::join(ex.response);
            w.write(rec);
        }
        out.close();
        m_log << "generate: " << w.count() << " responses" << (opts.with_prm ? " with PRM extension" : "") << '\n';
        return finish(dir, Stage::generate, inputs, Json{{"with_prm", opts.with_prm}});
    }

    fs::path evaluate(const StageOptions& opts)
    {
        auto gen = latest(Stage::generate);
        std::optional<jsonl::Meta> pmeta;
        auto preds = jsonl::read_all(gen / files::predictions, jsonl::Schema::prediction, &pmeta);
        if (!opts.force && (!pmeta || pmeta->config_hash != hash())) {
            throw DependencyError("generate", "predictions in " + gen.string() + " were produced under config " +
                                                  (pmeta ? pmeta->config_hash : std::string("<none>")) +
                                                  ", current config is " + hash() + "; pass --force to evaluate anyway");
        }

        std::vector<Tokens> hyps;
        std::vector<Tokens> refs;
        std::vector<Profile> profiles;
        bool extended = false;
        for (const auto& p : preds) {
            if (!p.contains("reference")) {
                throw SchemaError(0, "reference", "evaluation needs a reference response on every prediction");
            }
            hyps.push_back(text::tokenize(p.at("response").get<std::string>()));
            refs.push_back(text::tokenize(p.at("reference").get<std::string>()));
            auto sentences = p.at("profile").get<std::vector<std::string>>();
            if (p.at("extended_persona").is_string()) {
                sentences.push_back(p.at("extended_persona").get<std::string>());
                extended = true;
            }
            profiles.push_back(Profile::from_sentences(sentences));
        }
        auto nli = scoring::make_nli_backend(scoring::ScoringBackendSpec::parse(m_cfg.eval_nli));
        auto rep = eval::evaluate_run(hyps, refs, profiles, *nli);

        auto rec = rep.to_json();
        std::optional<double> dcg;
        if (!m_cfg.annotations.empty()) {
            std::vector<eval::AnnotationRecord> ann;
            for (const auto& a : jsonl::read_all(m_cfg.annotations, jsonl::Schema::annotation)) {
                eval::AnnotationRecord r;
                r.query = a.at("query").get<std::string>();
                r.rank = a.at("rank").get<std::size_t>();
                r.related = a.at("related").get<bool>();
                r.s_pp = a.at("s_pp").get<int>();
                r.query_relevance = a.value("query_relevance", 0);
                ann.push_back(r);
            }
            dcg = eval::mean_dcg_at_3(ann);
            rec["dcg3"] = *dcg;
        }
        rec["label"] = extended ? "with_prm" : "without_prm";

        RunDir dir(m_cfg.out / to_string(Stage::evaluate));
        {
            std::ofstream out(dir / files::report);
            jsonl::Writer w(out, jsonl::Schema::report, meta(jsonl::Schema::report));
            w.write(rec);
        }
        auto table = rep.to_table();
        if (dcg) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "dcg@3 %.4f\n", *dcg);
            table += buf;
        }
        std::ofstream(dir / files::table) << table;
        m_log << table;
        return finish(dir, Stage::evaluate, {{"generate", gen}}, Json{{"force", opts.force}});
    }

    config::PipelineConfig m_cfg;
    std::ostream& m_log;
};

}  // namespace persona::pipeline
