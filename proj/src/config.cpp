#include "fairsmooth/config.hpp"

#include "fairsmooth/numkit.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace fairsmooth::cli {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

struct Field {
    enum Kind { Int, Double, U64, Bool, Str } kind;
    void* ptr;
};

std::map<std::string, Field> field_table(RunConfig& c) {
    return {
        {"seed", {Field::U64, &c.seed}},
        {"workers", {Field::Int, &c.workers}},
        {"out", {Field::Str, &c.out}},
        {"data.count_train", {Field::Int, &c.count_train}},
        {"data.count_test", {Field::Int, &c.count_test}},
        {"data.factors", {Field::Str, &c.factors}},
        {"data.target_factor", {Field::Int, &c.target_factor}},
        {"data.sensitive_factor", {Field::Int, &c.sensitive_factor}},
        {"data.nuisance_dim", {Field::Int, &c.nuisance_dim}},
        {"data.nuisance_sigma", {Field::Double, &c.nuisance_sigma}},
        {"data.mixing_seed", {Field::U64, &c.mixing_seed}},
        {"data.train_path", {Field::Str, &c.train_path}},
        {"data.test_path", {Field::Str, &c.test_path}},
        {"data.write_csv", {Field::Bool, &c.write_csv}},
        {"flow.kind", {Field::Str, &c.flow_kind}},
        {"flow.layers", {Field::Int, &c.flow_layers}},
        {"flow.hidden", {Field::Int, &c.flow_hidden}},
        {"flow.fit_steps", {Field::Int, &c.flow_fit_steps}},
        {"flow.lr", {Field::Double, &c.flow_lr}},
        {"flow.checkpoint", {Field::Str, &c.flow_checkpoint}},
        {"encoder.hidden", {Field::Int, &c.enc_hidden}},
        {"encoder.layers", {Field::Int, &c.enc_layers}},
        {"encoder.k", {Field::Int, &c.enc_k}},
        {"encoder.momentum", {Field::Double, &c.enc_momentum}},
        {"similarity.epsilon", {Field::Double, &c.epsilon}},
        {"similarity.factors", {Field::Str, &c.similarity_factors}},
        {"similarity.attr_examples", {Field::Int, &c.attr_examples}},
        {"train.regime", {Field::Str, &c.regime}},
        {"train.lambda1", {Field::Double, &c.lambda1}},
        {"train.lambda2", {Field::Double, &c.lambda2}},
        {"train.delta", {Field::Double, &c.delta}},
        {"train.s", {Field::Int, &c.attack_s}},
        {"train.batch", {Field::Int, &c.batch}},
        {"train.lr", {Field::Double, &c.lr}},
        {"train.epochs", {Field::Int, &c.epochs}},
        {"train.cls_epochs", {Field::Int, &c.cls_epochs}},
        {"train.cls_lr", {Field::Double, &c.cls_lr}},
        {"smooth.sigma_enc", {Field::Double, &c.sigma_enc}},
        {"smooth.sigma_cls", {Field::Double, &c.sigma_cls}},
        {"smooth.alpha_c", {Field::Double, &c.alpha_c}},
        {"smooth.alpha_s", {Field::Double, &c.alpha_s}},
        {"smooth.n0", {Field::Int, &c.n0}},
        {"smooth.n", {Field::Int, &c.n}},
        {"smooth.m", {Field::Int, &c.m}},
        {"smooth.tau", {Field::Double, &c.tau}},
        {"smooth.chunk", {Field::Int, &c.chunk}},
        {"certify.max_points", {Field::Int, &c.max_points}},
        {"certify.timeout_s", {Field::Double, &c.timeout_s}},
        {"certify.max_timeouts", {Field::Int, &c.max_timeouts}},
        {"certify.grid", {Field::Int, &c.audit_grid}},
        {"certify.audit_m", {Field::Int, &c.audit_m}},
        {"certify.audit_votes", {Field::Int, &c.audit_votes}},
        {"certify.record_timing", {Field::Bool, &c.record_timing}},
        {"transfer.grid", {Field::Int, &c.transfer_grid}},
        {"transfer.audit", {Field::Str, &c.transfer_audit}},
        {"report.recon_points", {Field::Int, &c.recon_points}},
    };
}

std::string render(const Field& f) {
    char buf[64];
    switch (f.kind) {
        case Field::Int:
            std::snprintf(buf, sizeof buf, "%d", *static_cast<int*>(f.ptr));
            return buf;
        case Field::Double:
            std::snprintf(buf, sizeof buf, "%.17g", *static_cast<double*>(f.ptr));
            return buf;
        case Field::U64:
            std::snprintf(buf, sizeof buf, "%llu",
                          (unsigned long long)*static_cast<std::uint64_t*>(f.ptr));
            return buf;
        case Field::Bool:
            return *static_cast<bool*>(f.ptr) ? "true" : "false";
        case Field::Str:
            return *static_cast<std::string*>(f.ptr);
    }
    return "";
}

}  // namespace

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto table = field_table(cfg);
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown configuration key: " + key);
    const Field& f = it->second;
    const std::string v = trim(value);
    try {
        switch (f.kind) {
            case Field::Int:
                *static_cast<int*>(f.ptr) = std::stoi(v);
                break;
            case Field::Double:
                *static_cast<double*>(f.ptr) = std::stod(v);
                break;
            case Field::U64:
                *static_cast<std::uint64_t*>(f.ptr) = std::stoull(v);
                break;
            case Field::Bool:
                if (v == "true" || v == "1") {
                    *static_cast<bool*>(f.ptr) = true;
                } else if (v == "false" || v == "0") {
                    *static_cast<bool*>(f.ptr) = false;
                } else {
                    throw ConfigError("boolean key " + key + " expects true/false, got " + v);
                }
                break;
            case Field::Str:
                *static_cast<std::string*>(f.ptr) = v;
                break;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": " + v);
    }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
            }
            apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + ov);
        apply_kv(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
    return cfg;
}

std::string resolved_text(const RunConfig& cfg) {
    auto table = field_table(const_cast<RunConfig&>(cfg));
    std::string out;
    for (const auto& [key, field] : table) {  // std::map: sorted keys
        out += key;
        out += " = ";
        out += render(field);
        out += "\n";
    }
    return out;
}

std::uint64_t config_hash(const RunConfig& cfg) { return numkit::fnv1a(resolved_text(cfg)); }

std::string RunConfig::resolved_train_path() const {
    return train_path.empty() ? out + "/train.ds" : train_path;
}

std::string RunConfig::resolved_test_path() const {
    return test_path.empty() ? out + "/test.ds" : test_path;
}

smooth::SmoothingConfig RunConfig::smoothing() const {
    smooth::SmoothingConfig s;
    s.sigma_enc = sigma_enc;
    s.sigma_cls = sigma_cls;
    s.alpha_c = alpha_c;
    s.alpha_s = alpha_s;
    s.n0 = n0;
    s.n = n;
    s.m = m;
    s.tau = tau;
    s.chunk = chunk;
    return s;
}

train::TrainConfig RunConfig::training() const {
    train::TrainConfig t;
    t.lambda1 = lambda1;
    t.lambda2 = lambda2;
    t.delta = delta;
    t.s = attack_s;
    t.batch_size = batch;
    t.lr = lr;
    t.epochs = epochs;
    t.seed = seed;
    if (regime == "naive") {
        t.lambda1 = 0.0;
        t.lambda2 = 0.0;
    } else if (regime == "adversarial") {
        t.lambda2 = 0.0;
    } else if (regime == "contrastive") {
        t.lambda1 = 0.0;
    } else if (regime == "dataaug") {
        t.lambda1 = 0.0;
        t.lambda2 = 0.0;
        t.augment_s = attack_s;
    } else if (regime != "lassi") {
        throw ConfigError("unknown train.regime: " + regime);
    }
    return t;
}

synth::FactorSpec RunConfig::factor_spec() const {
    synth::FactorSpec spec;
    std::stringstream ss(factors);
    std::string entry;
    while (std::getline(ss, entry, ';')) {
        entry = trim(entry);
        if (entry.empty()) continue;
        std::stringstream es(entry);
        std::string name, kind, lo, hi;
        if (!std::getline(es, name, ':') || !std::getline(es, kind, ':') ||
            !std::getline(es, lo, ':') || !std::getline(es, hi, ':')) {
            throw ConfigError("data.factors entry needs name:kind:lo:hi, got: " + entry);
        }
        synth::Factor f;
        f.name = trim(name);
        kind = trim(kind);
        try {
            f.lo = std::stod(lo);
            f.hi = std::stod(hi);
            if (kind == "c") {
                f.discrete = false;
            } else if (kind.size() >= 2 && kind[0] == 'd') {
                f.discrete = true;
                f.cardinality = std::stoi(kind.substr(1));
            } else {
                throw ConfigError("factor kind must be c or d<N>, got: " + kind);
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad data.factors entry: " + entry);
        }
        spec.factors.push_back(std::move(f));
    }
    spec.target_factor = target_factor;
    spec.sensitive_factor = sensitive_factor;
    spec.nuisance_dim = nuisance_dim;
    spec.nuisance_sigma = nuisance_sigma;
    spec.mixing_seed = mixing_seed;
    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid factor specification: ") + e.what());
    }
    return spec;
}

std::vector<int> RunConfig::similarity_factor_indices() const {
    if (similarity_factors.empty()) return {sensitive_factor};
    std::vector<int> out;
    std::stringstream ss(similarity_factors);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("similarity.factors expects comma-separated indices, got: " + tok);
        }
    }
    if (out.empty()) throw ConfigError("similarity.factors resolved to an empty list");
    return out;
}

std::vector<std::map<std::string, std::string>> parse_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open grid file: " + path);

    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = v1,v2,...");
        }
        const std::string key = trim(line.substr(0, eq));
        std::vector<std::string> values;
        std::stringstream vs(line.substr(eq + 1));
        std::string v;
        while (std::getline(vs, v, ',')) {
            v = trim(v);
            if (!v.empty()) values.push_back(v);
        }
        if (values.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": no values for " + key);
        }
        axes.emplace_back(key, std::move(values));
    }
    if (axes.empty()) throw ConfigError(path + ": empty sweep grid");

    std::vector<std::map<std::string, std::string>> cells{{}};
    for (const auto& [key, values] : axes) {
        std::vector<std::map<std::string, std::string>> next;
        for (const auto& cell : cells) {
            for (const std::string& v : values) {
                auto copy = cell;
                copy[key] = v;
                next.push_back(std::move(copy));
            }
        }
        cells = std::move(next);
    }
    return cells;
}

}  // namespace fairsmooth::cli
