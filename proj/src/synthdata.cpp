#include "fairsmooth/synthdata.hpp"

#include "fairsmooth/checkpoint.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace fairsmooth::synth {

namespace {
constexpr const char* kDatasetMagic = "FAIRSMOOTH-DS1";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

double factor_level_value(const Factor& f, int level) {
    if (!f.discrete) throw std::logic_error("factor_level_value: continuous factor");
    if (level < 0 || level >= f.cardinality) {
        throw std::domain_error("factor_level_value: level out of range");
    }
    if (f.cardinality == 1) return 0.5 * (f.lo + f.hi);
    return f.lo + (f.hi - f.lo) * double(level) / double(f.cardinality - 1);
}

int FactorSpec::num_classes() const {
    const Factor& t = factors.at(std::size_t(target_factor));
    return t.discrete ? t.cardinality : 2;
}

void FactorSpec::validate() const {
    if (factors.size() < 2) throw std::domain_error("FactorSpec: need at least two factors");
    if (target_factor < 0 || target_factor >= factor_count() || sensitive_factor < 0 ||
        sensitive_factor >= factor_count()) {
        throw std::domain_error("FactorSpec: factor index out of range");
    }
    if (target_factor == sensitive_factor) {
        throw std::domain_error("FactorSpec: target and sensitive factor must differ");
    }
    if (nuisance_dim < 0) throw std::domain_error("FactorSpec: nuisance_dim >= 0 required");
    for (const Factor& f : factors) {
        if (f.discrete && f.cardinality < 1) {
            throw std::domain_error("FactorSpec: discrete factor needs cardinality >= 1");
        }
        if (!(f.lo < f.hi)) throw std::domain_error("FactorSpec: factor range must be nonempty");
    }
    const Factor& t = factors.at(std::size_t(target_factor));
    if (t.discrete && t.cardinality < 2) {
        throw std::domain_error("FactorSpec: target factor needs at least two levels");
    }
}

flow::GroundTruthGenerator generator_for(const FactorSpec& spec) {
    return flow::make_ground_truth_generator(spec.observation_dim(), spec.mixing_seed);
}

namespace {

int label_of(const FactorSpec& spec, double target_value, int target_level) {
    const Factor& t = spec.factors.at(std::size_t(spec.target_factor));
    if (t.discrete) return target_level;
    return target_value >= 0.5 * (t.lo + t.hi) ? 1 : 0;
}

}  // namespace

LabeledDataset generate(const FactorSpec& spec, int count, numkit::RngStream& rng) {
    spec.validate();
    if (count < 1) throw std::invalid_argument("generate: count >= 1 required");

    const flow::GroundTruthGenerator gen = generator_for(spec);
    LabeledDataset ds;
    ds.num_classes = spec.num_classes();
    ds.xs.resize(std::size_t(count));
    ds.ys.resize(std::size_t(count));
    ds.factor_table.resize(count, spec.factor_count());

    // Keyed off the parent's next value so successive calls differ; records
    // then derive their own substreams and are order-free.
    const numkit::RngStream base = rng.substream("records").substream(rng.next_u64());
    for (int i = 0; i < count; ++i) {
        numkit::RngStream rec = base.substream(std::uint64_t(i));
        Vec latent(spec.observation_dim());
        int target_level = -1;
        for (int f = 0; f < spec.factor_count(); ++f) {
            const Factor& fac = spec.factors[std::size_t(f)];
            double value;
            if (fac.discrete) {
                const int level =
                    std::min(fac.cardinality - 1, int(rec.next_unit() * double(fac.cardinality)));
                value = factor_level_value(fac, level);
                if (f == spec.target_factor) target_level = level;
            } else {
                value = fac.lo + (fac.hi - fac.lo) * rec.next_unit();
            }
            latent[f] = value;
            ds.factor_table(i, f) = value;
        }
        for (int d = 0; d < spec.nuisance_dim; ++d) {
            latent[spec.factor_count() + d] = rec.next_gaussian(spec.nuisance_sigma);
        }
        ds.xs[std::size_t(i)] = gen.decode(latent);
        ds.ys[std::size_t(i)] =
            label_of(spec, ds.factor_table(i, spec.target_factor), target_level);
    }
    return ds;
}

std::vector<Vec> ground_truth_variants(const FactorSpec& spec,
                                       const flow::GroundTruthGenerator& gen, const Vec& x,
                                       int grid) {
    spec.validate();
    if (grid < 2) throw std::invalid_argument("ground_truth_variants: grid >= 2 required");
    const Vec z = gen.encode(x);
    if ((gen.decode(z) - x).cwiseAbs().maxCoeff() > 1e-6) {
        throw std::domain_error("ground_truth_variants: x does not invert under the mixing");
    }

    const Factor& s = spec.factors.at(std::size_t(spec.sensitive_factor));
    std::vector<double> values;
    if (s.discrete) {
        for (int l = 0; l < s.cardinality; ++l) values.push_back(factor_level_value(s, l));
    } else {
        for (int j = 0; j < grid; ++j) {
            values.push_back(s.lo + (s.hi - s.lo) * double(j) / double(grid - 1));
        }
    }

    std::vector<Vec> variants;
    variants.reserve(values.size());
    for (double v : values) {
        Vec z_v = z;
        z_v[spec.sensitive_factor] = v;
        variants.push_back(gen.decode(z_v));
    }
    return variants;
}

void write_dataset(const std::string& path, const LabeledDataset& ds) {
    io::ByteWriter w;
    w.raw(kDatasetMagic, std::strlen(kDatasetMagic));
    w.u32(kDatasetVersion);
    w.u32(std::uint32_t(ds.size()));
    w.u32(std::uint32_t(ds.dim()));
    w.u32(std::uint32_t(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (int d = 0; d < ds.dim(); ++d) w.f64(ds.xs[i][d]);
        w.u32(std::uint32_t(ds.ys[i]));
    }
    if (ds.has_factors()) {
        const std::uint64_t block = 4 + 8ULL * std::uint64_t(ds.factor_table.size());
        w.u64(block);
        w.u32(std::uint32_t(ds.factor_table.cols()));
        for (int r = 0; r < ds.factor_table.rows(); ++r) {
            for (int c = 0; c < ds.factor_table.cols(); ++c) w.f64(ds.factor_table(r, c));
        }
    } else {
        w.u64(0);
    }
    w.write_file(path);
}

LabeledDataset read_dataset(const std::string& path) {
    io::ByteReader r(path);
    r.expect_magic(kDatasetMagic);
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) throw io::UnsupportedVersion(path, version);
    LabeledDataset ds;
    const std::uint32_t count = r.u32();
    const std::uint32_t dim = r.u32();
    ds.num_classes = int(r.u32());
    ds.xs.resize(count);
    ds.ys.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Vec x(dim);
        for (std::uint32_t d = 0; d < dim; ++d) x[d] = r.f64();
        ds.xs[i] = std::move(x);
        ds.ys[i] = int(r.u32());
    }
    const std::uint64_t block = r.u64();
    if (block > 0) {
        const std::uint32_t n_factors = r.u32();
        ds.factor_table.resize(count, n_factors);
        for (std::uint32_t i = 0; i < count; ++i) {
            for (std::uint32_t f = 0; f < n_factors; ++f) ds.factor_table(i, f) = r.f64();
        }
    }
    if (!r.done()) throw ParseError(path + ": trailing bytes", r.pos);
    return ds;
}

void write_dataset_csv(const std::string& path, const LabeledDataset& ds) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream out(target);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "label";
    for (int d = 0; d < ds.dim(); ++d) out << ",x" << d;
    for (int f = 0; f < ds.factor_table.cols(); ++f) out << ",factor" << f;
    out << "\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.ys[i];
        for (int d = 0; d < ds.dim(); ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.xs[i][d]);
            out << ',' << buf;
        }
        for (int f = 0; f < ds.factor_table.cols(); ++f) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.factor_table(int(i), f));
            out << ',' << buf;
        }
        out << "\n";
    }
}

LabeledDataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError(path + ": missing header", 0);

    int n_x = 0, n_f = 0;
    {
        std::stringstream ss(header);
        std::string col;
        bool first = true;
        while (std::getline(ss, col, ',')) {
            if (first) {
                if (col != "label") throw ParseError(path + ": first column must be label", 0);
                first = false;
            } else if (col.rfind("x", 0) == 0) {
                n_x++;
            } else if (col.rfind("factor", 0) == 0) {
                n_f++;
            } else {
                throw ParseError(path + ": unknown column " + col, 0);
            }
        }
    }

    LabeledDataset ds;
    std::string line;
    std::vector<Vec> factor_rows;
    int max_label = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ',')) throw ParseError(path + ": short row", 0);
        ds.ys.push_back(std::stoi(cell));
        max_label = std::max(max_label, ds.ys.back());
        Vec x(n_x);
        for (int d = 0; d < n_x; ++d) {
            if (!std::getline(ss, cell, ',')) throw ParseError(path + ": short row", 0);
            x[d] = std::stod(cell);
        }
        ds.xs.push_back(std::move(x));
        if (n_f > 0) {
            Vec f(n_f);
            for (int d = 0; d < n_f; ++d) {
                if (!std::getline(ss, cell, ',')) throw ParseError(path + ": short row", 0);
                f[d] = std::stod(cell);
            }
            factor_rows.push_back(std::move(f));
        }
    }
    if (n_f > 0) {
        ds.factor_table.resize(Eigen::Index(factor_rows.size()), n_f);
        for (std::size_t i = 0; i < factor_rows.size(); ++i) {
            ds.factor_table.row(Eigen::Index(i)) = factor_rows[i].transpose();
        }
    }
    ds.num_classes = max_label + 1;
    return ds;
}

TransferReport ground_truth_fairness_eval(const certify::Pipeline& models,
                                          const LabeledDataset& ds, const FactorSpec& fspec,
                                          const flow::SimilaritySpec& spec,
                                          const smooth::SmoothingConfig& cfg, std::uint64_t seed,
                                          int workers, double timeout_s, int max_points, int grid,
                                          bool audit_all, int audit_m, int audit_votes,
                                          std::vector<certify::CertificateOutcome>* outcomes_out) {
    if (!ds.has_factors()) {
        throw std::invalid_argument("ground_truth_fairness_eval: dataset lacks a factor table");
    }
    const auto* gt = dynamic_cast<const flow::GroundTruthGenerator*>(models.gen);
    if (!gt) {
        throw std::invalid_argument(
            "ground_truth_fairness_eval: pipeline generator must be the ground-truth mixing");
    }

    certify::DatasetSummary summary;
    std::vector<certify::CertificateOutcome> outcomes = certify::certify_dataset(
        models, ds.xs, ds.ys, spec, cfg, seed, workers, timeout_s, max_points, &summary);

    TransferReport report;
    report.count = summary.count;
    report.certified = summary.certified;
    report.acc_pct = summary.acc_pct;
    report.fair_pct = summary.fair_pct;

    // Audit pass: same prediction route for the reference point and all of
    // its ground-truth variants.
    const numkit::RngStream base = numkit::RngStream(seed, 0).substream("transfer");
    std::vector<char> audited(std::size_t(summary.count), 0);
    std::vector<char> unfair(std::size_t(summary.count), 0);

    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= summary.count) return;
            const bool certified =
                outcomes[std::size_t(i)].verdict == certify::Verdict::Certified;
            if (!audit_all && !certified) continue;
            audited[std::size_t(i)] = 1;

            numkit::RngStream point_rng = base.substream(std::uint64_t(i));
            auto predict = [&](const Vec& x, std::uint64_t tag) {
                const Vec z = models.gen->encode(x);
                const smooth::VecFn g = certify::segment_map(models, spec, z);
                const Vec center = smooth::smoothed_center_eval(
                    g, Vec::Zero(spec.attr_count()), cfg.sigma_enc, audit_m, cfg.chunk,
                    point_rng.substream("ctr").substream(tag));
                return smooth::smoothed_majority_class(*models.cls, center, cfg.sigma_cls,
                                                       audit_votes, cfg.chunk,
                                                       point_rng.substream("vote").substream(tag));
            };

            const int ref = predict(ds.xs[std::size_t(i)], 0);
            const auto variants = ground_truth_variants(fspec, *gt, ds.xs[std::size_t(i)], grid);
            for (std::size_t v = 0; v < variants.size(); ++v) {
                if (predict(variants[v], std::uint64_t(v) + 1) != ref) {
                    unfair[std::size_t(i)] = 1;
                    break;
                }
            }
        }
    };

    const int pool = std::max(1, workers);
    if (pool == 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < pool; ++w) threads.emplace_back(work);
        for (std::thread& t : threads) t.join();
    }

    for (int i = 0; i < summary.count; ++i) {
        report.audited += audited[std::size_t(i)];
        if (unfair[std::size_t(i)]) {
            report.unfair++;
            report.unfair_indices.push_back(i);
        }
    }
    if (report.count > 0) {
        report.unfair_pct = 100.0 * double(report.unfair) / double(report.count);
    }
    if (outcomes_out) *outcomes_out = std::move(outcomes);
    return report;
}

}  // namespace fairsmooth::synth
