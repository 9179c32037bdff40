#include "fairsmooth/cli.hpp"

#include "fairsmooth/certify.hpp"
#include "fairsmooth/checkpoint.hpp"
#include "fairsmooth/flow.hpp"
#include "fairsmooth/synthdata.hpp"
#include "fairsmooth/train.hpp"

#include <json.hpp>

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <thread>

namespace fairsmooth::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_text_atomic(const std::string& path, const std::string& content) {
    io::ByteWriter w;
    w.raw(content.data(), content.size());
    w.write_file(path);
}

void emit_resolved(const RunConfig& cfg, const std::string& command) {
    write_text_atomic(cfg.out + "/" + command + ".resolved.cfg", resolved_text(cfg));
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string opt4(const std::optional<double>& v) { return v ? fmt4(*v) : std::string(); }

// Everything a trained or certifying run needs, assembled from one config.
struct Rig {
    synth::FactorSpec fspec;
    synth::LabeledDataset train;
    synth::LabeledDataset test;
    std::unique_ptr<flow::Bijection> gen;
    flow::SimilaritySpec spec;
    bool flow_was_fit = false;
    flow::FlowModel fitted_flow;  // valid when flow_was_fit
};

}  // namespace

flow::SimilaritySpec build_similarity_spec(const RunConfig& cfg, const synth::FactorSpec& fspec,
                                           const flow::Bijection& gen,
                                           const synth::LabeledDataset& train) {
    if (!train.has_factors()) {
        throw ParseError("train dataset lacks the factor table needed for attribute vectors", 0);
    }
    const std::vector<int> indices = cfg.similarity_factor_indices();
    flow::SimilaritySpec spec;
    spec.attributes.resize(gen.dim(), Eigen::Index(indices.size()));
    for (std::size_t a = 0; a < indices.size(); ++a) {
        const int f = indices[a];
        if (f < 0 || f >= fspec.factor_count()) {
            throw ConfigError("similarity factor index out of range: " + std::to_string(f));
        }
        const synth::Factor& fac = fspec.factors[std::size_t(f)];
        const double mid = 0.5 * (fac.lo + fac.hi);
        std::vector<Vec> pos, neg;
        for (std::size_t i = 0; i < train.size(); ++i) {
            auto& side = train.factor_table(int(i), f) >= mid ? pos : neg;
            if (int(side.size()) < cfg.attr_examples) side.push_back(train.xs[i]);
        }
        spec.attributes.col(Eigen::Index(a)) = flow::attribute_vector(gen, pos, neg);
    }
    spec.epsilon = cfg.epsilon;
    spec.validate();
    return spec;
}

namespace {

Rig assemble(const RunConfig& cfg) {
    Rig rig;
    rig.fspec = cfg.factor_spec();
    rig.train = synth::read_dataset(cfg.resolved_train_path());
    rig.test = synth::read_dataset(cfg.resolved_test_path());

    if (cfg.flow_kind == "ground_truth") {
        rig.gen = std::make_unique<flow::GroundTruthGenerator>(synth::generator_for(rig.fspec));
    } else if (cfg.flow_kind == "coupling") {
        const std::string default_path = cfg.out + "/flow.flow";
        std::string path = cfg.flow_checkpoint.empty() ? default_path : cfg.flow_checkpoint;
        if (fs::exists(path)) {
            rig.gen = std::make_unique<flow::FlowModel>(io::load_flow(path));
        } else if (cfg.flow_checkpoint.empty()) {
            numkit::RngStream init = numkit::RngStream(cfg.seed, 0).substream("flow_init");
            flow::FlowModel model =
                flow::make_flow(rig.train.dim(), cfg.flow_layers, cfg.flow_hidden, init);
            model = flow::mle_train_flow(model, rig.train.xs, cfg.flow_fit_steps, cfg.flow_lr);
            io::save_flow(default_path, model);
            rig.flow_was_fit = true;
            rig.fitted_flow = model;
            rig.gen = std::make_unique<flow::FlowModel>(std::move(model));
        } else {
            throw ParseError("flow checkpoint not found: " + path, 0);
        }
    } else {
        throw ConfigError("flow.kind must be ground_truth or coupling, got: " + cfg.flow_kind);
    }

    rig.spec = build_similarity_spec(cfg, rig.fspec, *rig.gen, rig.train);
    return rig;
}

certify::Pipeline load_pipeline(const RunConfig& cfg, const Rig& rig,
                                nets::LassiEncoder& enc_storage,
                                nets::LinearClassifier& cls_storage) {
    enc_storage = io::load_encoder(cfg.out + "/encoder.net");
    cls_storage = io::load_classifier(cfg.out + "/classifier.net");
    return certify::Pipeline{rig.gen.get(), &enc_storage, &cls_storage};
}

json outcome_record(const RunConfig& cfg, const certify::CertificateOutcome& o) {
    json rec;
    rec["index"] = o.index;
    rec["verdict"] = certify::to_string(o.verdict);
    rec["acc_flag"] =
        o.prediction_correct.has_value() ? json(*o.prediction_correct) : json(nullptr);
    if (o.z_cs.has_value()) {
        rec["z_cs_digest"] =
            hex64(numkit::fnv1a(o.z_cs->data(), std::size_t(o.z_cs->size()) * sizeof(double)));
    } else {
        rec["z_cs_digest"] = nullptr;
    }
    rec["r_cs"] = o.r_cs.has_value() ? json(*o.r_cs) : json(nullptr);
    rec["R"] = o.R.has_value() ? json(*o.R) : json(nullptr);
    rec["p_lower"] = o.p_lower.has_value() ? json(*o.p_lower) : json(nullptr);
    rec["predicted_class"] =
        o.predicted_class.has_value() ? json(*o.predicted_class) : json(nullptr);
    rec["confidence"] = o.confidence;
    // Wall time is nondeterministic; it is recorded only on request so that
    // result files stay byte-reproducible.
    rec["wall_ms"] = cfg.record_timing ? json(o.wall_ms) : json(nullptr);
    rec["timeout"] = o.timeout;
    json audit;
    audit["center_ran"] = o.audit.center_ran;
    audit["center_abstained"] = o.audit.center_abstained;
    audit["center_r"] = o.audit.center_r;
    audit["classify_ran"] = o.audit.classify_ran;
    audit["classify_abstained"] = o.audit.classify_abstained;
    audit["raw_p_lower"] = o.audit.raw_p_lower;
    audit["votes"] = o.audit.votes;
    audit["samples"] = o.audit.vote_samples;
    rec["audit"] = audit;
    return rec;
}

void write_outcomes(const RunConfig& cfg, const std::vector<certify::CertificateOutcome>& outs,
                    const std::string& path) {
    std::string body;
    for (const auto& o : outs) {
        body += outcome_record(cfg, o).dump();
        body += "\n";
    }
    write_text_atomic(path, body);
}

void write_summary_csv(const std::string& path, const certify::DatasetSummary& s) {
    std::string body = "n,acc_pct,fair_pct,abstain_pct,timeouts,certified,correct\n";
    body += std::to_string(s.count) + ",";
    body += opt4(s.acc_pct) + ",";
    body += opt4(s.fair_pct) + ",";
    body += s.count > 0 ? fmt4(100.0 * double(s.abstained) / double(s.count)) : std::string();
    body += "," + std::to_string(s.timeouts);
    body += "," + std::to_string(s.certified);
    body += "," + std::to_string(s.correct);
    body += "\n";
    write_text_atomic(path, body);
}

}  // namespace

int cmd_generate(const RunConfig& cfg) {
    const synth::FactorSpec fspec = cfg.factor_spec();
    numkit::RngStream root(cfg.seed, 0);
    numkit::RngStream train_rng = root.substream("gen-train");
    numkit::RngStream test_rng = root.substream("gen-test");
    const synth::LabeledDataset train = synth::generate(fspec, cfg.count_train, train_rng);
    const synth::LabeledDataset test = synth::generate(fspec, cfg.count_test, test_rng);

    synth::write_dataset(cfg.resolved_train_path(), train);
    synth::write_dataset(cfg.resolved_test_path(), test);
    if (cfg.write_csv) {
        synth::write_dataset_csv(cfg.resolved_train_path() + ".csv", train);
        synth::write_dataset_csv(cfg.resolved_test_path() + ".csv", test);
    }
    emit_resolved(cfg, "generate");
    std::printf("generate: %d train / %d test records, dim %d, %d classes\n", cfg.count_train,
                cfg.count_test, train.dim(), train.num_classes);
    return kOk;
}

int cmd_train(const RunConfig& cfg) {
    const Rig rig = assemble(cfg);
    const train::TrainConfig tcfg = cfg.training();
    train::EncoderArch arch;
    arch.hidden = cfg.enc_hidden;
    arch.hidden_layers = cfg.enc_layers;
    arch.k = cfg.enc_k;
    arch.momentum = cfg.enc_momentum;

    train::EncoderTrainResult result = train::train_encoder(
        tcfg, arch, *rig.gen, rig.spec, rig.train.xs, rig.train.ys, rig.train.num_classes);

    std::vector<double> cls_trace;
    const nets::LinearClassifier classifier = train::train_classifier(
        *rig.gen, result.encoder, rig.train.xs, rig.train.ys, rig.train.num_classes,
        cfg.sigma_cls, cfg.cls_epochs, cfg.cls_lr, cfg.batch, cfg.seed, &cls_trace);

    io::save_encoder(cfg.out + "/encoder.net", result.encoder);
    io::save_classifier(cfg.out + "/aux.net", result.aux);
    io::save_classifier(cfg.out + "/classifier.net", classifier);

    std::string trace;
    for (const train::EpochStats& e : result.trace) {
        json rec;
        rec["epoch"] = e.epoch;
        rec["cls"] = e.cls;
        rec["adv"] = e.adv;
        rec["contr"] = e.contr;
        rec["total"] = e.total;
        rec["train_acc"] = e.train_acc;
        trace += rec.dump();
        trace += "\n";
    }
    for (std::size_t i = 0; i < cls_trace.size(); ++i) {
        json rec;
        rec["cls_epoch"] = i;
        rec["loss"] = cls_trace[i];
        trace += rec.dump();
        trace += "\n";
    }
    write_text_atomic(cfg.out + "/trace.jsonl", trace);
    emit_resolved(cfg, "train");

    const double final_acc = result.trace.empty() ? 0.0 : result.trace.back().train_acc;
    std::printf("train[%s]: %d epochs, final train acc %.4f%s\n", cfg.regime.c_str(), cfg.epochs,
                final_acc, rig.flow_was_fit ? ", coupling flow fitted" : "");
    return kOk;
}

int cmd_certify(const RunConfig& cfg) {
    const Rig rig = assemble(cfg);
    nets::LassiEncoder enc;
    nets::LinearClassifier cls;
    const certify::Pipeline models = load_pipeline(cfg, rig, enc, cls);

    certify::DatasetSummary summary;
    const auto outcomes =
        certify::certify_dataset(models, rig.test.xs, rig.test.ys, rig.spec, cfg.smoothing(),
                                 cfg.seed, cfg.workers, cfg.timeout_s, cfg.max_points, &summary);

    write_outcomes(cfg, outcomes, cfg.out + "/outcomes.jsonl");
    write_summary_csv(cfg.out + "/summary.csv", summary);
    emit_resolved(cfg, "certify");

    std::printf("certify: n=%d acc=%s fair=%s abstain=%d timeout=%d\n", summary.count,
                opt4(summary.acc_pct).c_str(), opt4(summary.fair_pct).c_str(), summary.abstained,
                summary.timeouts);
    if (summary.timeouts > cfg.max_timeouts) return kTimeoutBudget;
    return kOk;
}

int cmd_transfer(const RunConfig& cfg) {
    const Rig rig = assemble(cfg);
    nets::LassiEncoder enc;
    nets::LinearClassifier cls;
    const certify::Pipeline models = load_pipeline(cfg, rig, enc, cls);

    if (cfg.transfer_audit != "certified" && cfg.transfer_audit != "all") {
        throw ConfigError("transfer.audit must be certified or all, got: " + cfg.transfer_audit);
    }
    std::vector<certify::CertificateOutcome> outcomes;
    const synth::TransferReport report = synth::ground_truth_fairness_eval(
        models, rig.test, rig.fspec, rig.spec, cfg.smoothing(), cfg.seed, cfg.workers,
        cfg.timeout_s, cfg.max_points, cfg.transfer_grid, cfg.transfer_audit == "all",
        cfg.audit_m, cfg.audit_votes, &outcomes);

    write_outcomes(cfg, outcomes, cfg.out + "/outcomes.jsonl");
    std::string body = "n,acc_pct,fair_pct,unfair_pct,audited,unfair,certified\n";
    body += std::to_string(report.count) + ",";
    body += opt4(report.acc_pct) + ",";
    body += opt4(report.fair_pct) + ",";
    body += opt4(report.unfair_pct) + ",";
    body += std::to_string(report.audited) + "," + std::to_string(report.unfair) + "," +
            std::to_string(report.certified) + "\n";
    write_text_atomic(cfg.out + "/transfer.csv", body);
    emit_resolved(cfg, "transfer");

    std::printf("transfer: n=%d acc=%s fair=%s unfair=%s audited=%d\n", report.count,
                opt4(report.acc_pct).c_str(), opt4(report.fair_pct).c_str(),
                opt4(report.unfair_pct).c_str(), report.audited);
    return kOk;
}

int cmd_sweep(const RunConfig& base, const std::string& grid_path) {
    const auto cells = parse_grid(grid_path);

    // Shared datasets for every cell.
    if (!fs::exists(base.resolved_train_path()) || !fs::exists(base.resolved_test_path())) {
        cmd_generate(base);
    }

    // A coupling generator is fitted once and shared; cells reference the
    // checkpoint instead of refitting.
    RunConfig shared = base;
    if (base.flow_kind == "coupling" && base.flow_checkpoint.empty()) {
        const std::string flow_path = base.out + "/flow.flow";
        if (!fs::exists(flow_path)) {
            assemble(base);  // fits and saves <out>/flow.flow as a side effect
        }
        shared.flow_checkpoint = flow_path;
    }

    struct Cell {
        std::map<std::string, std::string> kv;
        RunConfig cfg;
        std::string dir;
        bool ok = false;
        std::string error;
    };
    std::vector<Cell> jobs;
    for (const auto& kv : cells) {
        Cell cell;
        cell.kv = kv;
        cell.cfg = shared;
        for (const auto& [k, v] : kv) apply_kv(cell.cfg, k, v);
        cell.cfg.train_path = base.resolved_train_path();
        cell.cfg.test_path = base.resolved_test_path();
        cell.cfg.workers = 1;
        cell.cfg.out = base.out + "/cells/" + hex64(config_hash(cell.cfg));
        jobs.push_back(std::move(cell));
    }

    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= int(jobs.size())) return;
            Cell& cell = jobs[std::size_t(i)];
            try {
                if (fs::exists(cell.cfg.out + "/summary.csv")) {
                    cell.ok = true;  // completed in an earlier run
                    continue;
                }
                const int rc_train = cmd_train(cell.cfg);
                const int rc_cert = rc_train == kOk ? cmd_certify(cell.cfg) : rc_train;
                cell.ok = rc_cert == kOk;
                if (!cell.ok) cell.error = "exit code " + std::to_string(rc_cert);
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
        }
    };
    const int pool = std::max(1, base.workers);
    if (pool == 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < pool; ++w) threads.emplace_back(work);
        for (std::thread& t : threads) t.join();
    }

    // One row per cell, grid keys first, in grid order.
    std::string body = "cell";
    for (const auto& [k, v] : cells.front()) {
        (void)v;
        body += "," + k;
    }
    body += ",n,acc_pct,fair_pct,abstain_pct\n";
    int failures = 0;
    for (const Cell& cell : jobs) {
        body += hex64(config_hash(cell.cfg));
        for (const auto& [k, v] : cell.kv) {
            (void)k;
            body += "," + v;
        }
        if (cell.ok) {
            std::ifstream in(cell.cfg.out + "/summary.csv");
            std::string header, row;
            std::getline(in, header);
            std::getline(in, row);
            // n,acc,fair,abstain are the first four summary columns.
            std::stringstream ss(row);
            std::string n, acc, fair, abstain;
            std::getline(ss, n, ',');
            std::getline(ss, acc, ',');
            std::getline(ss, fair, ',');
            std::getline(ss, abstain, ',');
            body += "," + n + "," + acc + "," + fair + "," + abstain;
        } else {
            body += ",,,,";
            failures++;
            std::fprintf(stderr, "sweep cell failed (%s): %s\n", cell.cfg.out.c_str(),
                         cell.error.c_str());
        }
        body += "\n";
    }
    write_text_atomic(base.out + "/sweep.csv", body);
    emit_resolved(base, "sweep");
    std::printf("sweep: %zu cells, %d failed\n", jobs.size(), failures);
    return failures == 0 ? kOk : kNumericError;
}

int cmd_report(const RunConfig& cfg, const std::vector<std::string>& inputs, bool recon) {
    if (recon) {
        const Rig rig = assemble(cfg);
        const flow::GroundTruthGenerator readout = synth::generator_for(rig.fspec);
        const int d = rig.spec.attr_count();
        const int grid = 15;
        std::string body = "point,grid_index,t,label";
        for (int f = 0; f < rig.fspec.factor_count(); ++f) {
            body += "," + rig.fspec.factors[std::size_t(f)].name;
        }
        body += "\n";
        const double t_max = rig.spec.epsilon / std::sqrt(double(d));
        const int points = std::min<int>(cfg.recon_points, int(rig.test.size()));
        for (int p = 0; p < points; ++p) {
            const Vec z_G = rig.gen->encode(rig.test.xs[std::size_t(p)]);
            for (int j = 0; j < grid; ++j) {
                // Figure convention: the same t multiplies every attribute.
                const double t = -t_max + 2.0 * t_max * double(j) / double(grid - 1);
                const Vec coeffs = Vec::Constant(d, t);
                const Vec x = rig.gen->decode(flow::similarity_endpoint(rig.spec, z_G, coeffs));
                const Vec factors = readout.encode(x);
                body += std::to_string(p) + "," + std::to_string(j) + "," + fmt4(t) + "," +
                        std::to_string(rig.test.ys[std::size_t(p)]);
                for (int f = 0; f < rig.fspec.factor_count(); ++f) body += "," + fmt4(factors[f]);
                body += "\n";
            }
        }
        write_text_atomic(cfg.out + "/recon.csv", body);
        emit_resolved(cfg, "report");
        std::printf("report: wrote %s\n", (cfg.out + "/recon.csv").c_str());
        return kOk;
    }

    std::string body = "label,n,acc_pct,fair_pct\n";
    std::string text;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %8s %10s %10s\n", "label", "n", "acc_pct", "fair_pct");
    text += line;
    for (const std::string& input : inputs) {
        const auto eq = input.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("report inputs must be label=path, got: " + input);
        }
        const std::string label = input.substr(0, eq);
        const std::string path = input.substr(eq + 1);
        std::string n, acc, fair;
        std::ifstream in(path);
        if (in) {
            std::string header, row;
            std::getline(in, header);
            std::getline(in, row);
            std::stringstream ss(row);
            std::string abstain;
            std::getline(ss, n, ',');
            std::getline(ss, acc, ',');
            std::getline(ss, fair, ',');
        }
        // Missing runs stay as explicit empty cells.
        body += label + "," + n + "," + acc + "," + fair + "\n";
        std::snprintf(line, sizeof line, "%-16s %8s %10s %10s\n", label.c_str(),
                      n.empty() ? "null" : n.c_str(), acc.empty() ? "null" : acc.c_str(),
                      fair.empty() ? "null" : fair.c_str());
        text += line;
    }
    // Certificates are per point: no multiple-testing correction is applied
    // across a dataset, so each row's confidence is 1 - alpha_c - alpha_s
    // for each individual point.
    text += "note: certificates hold per point with confidence 1 - alpha_c - alpha_s;"
            " no dataset-level multiple-testing correction is applied\n";
    write_text_atomic(cfg.out + "/report.csv", body);
    write_text_atomic(cfg.out + "/report.txt", text);
    emit_resolved(cfg, "report");
    std::printf("%s", text.c_str());
    return kOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
    if (dynamic_cast<const ParseError*>(&e)) return kDataError;
    if (dynamic_cast<const io::UnsupportedVersion*>(&e)) return kDataError;
    if (dynamic_cast<const TrainError*>(&e)) return kNumericError;
    if (dynamic_cast<const std::domain_error*>(&e)) return kNumericError;
    if (dynamic_cast<const std::logic_error*>(&e)) return kNumericError;
    if (dynamic_cast<const std::runtime_error*>(&e)) return kDataError;
    return kNumericError;
}

}  // namespace fairsmooth::cli
