#pragma once
#include <chrono>
#include <cstdio>
#include <ctime>
#include <string>
#include <vector>

#include "json.hpp"

#include "bprl/landscape.hpp"
#include "bprl/trainer.hpp"

namespace bprl {

// Result tables. CSV output is byte-stable under rerun; anything
// non-reproducible (timestamps) lives only in the JSON companions.

struct ReportRow {
    std::string model_role;              // clean | backdoored | purified-... | retuned | ep
    std::string phase;                   // O-Backdoor | O-Robustness | P-Robustness
    double c_acc = 0.0;                  // fractions in [0,1]
    double asr = 0.0;
};

struct RobustnessReport {
    std::vector<ReportRow> rows;

    void add(const std::string& role, const std::string& phase, const EvalReport& e) {
        rows.push_back({role, phase, e.c_acc(), e.asr()});
    }
};

inline std::string format_pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

inline std::string robustness_csv(const RobustnessReport& rep) {
    std::string out = "model_role,phase,c_acc,asr\n";
    for (const auto& r : rep.rows) {
        out += r.model_role + "," + r.phase + "," + format_pct(r.c_acc) + "," +
               format_pct(r.asr) + "\n";
    }
    return out;
}

inline std::string now_iso8601() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

inline nlohmann::json robustness_json(const RobustnessReport& rep, const std::string& cfg_hash,
                                      std::uint64_t seed) {
    nlohmann::json j;
    j["config_hash"] = cfg_hash;
    j["seed"] = seed;
    j["created_at"] = now_iso8601();
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        j["rows"].push_back({{"model_role", r.model_role},
                             {"phase", r.phase},
                             {"c_acc", r.c_acc},
                             {"asr", r.asr}});
    }
    return j;
}

inline std::string lmc_csv(const LmcCurve& curve) {
    std::string out = "t,error\n";
    char buf[64];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", p.t, p.error);
        out += buf;
    }
    return out;
}

inline nlohmann::json barrier_json(const BarrierStat& s, const LmcCurve& curve,
                                   const std::string& cfg_hash, std::uint64_t seed) {
    nlohmann::json j;
    j["config_hash"] = cfg_hash;
    j["seed"] = seed;
    j["created_at"] = now_iso8601();
    j["kind"] = curve.kind == LmcKind::backdoor ? "backdoor" : "clean";
    j["endpoint_a"] = curve.endpoint_a;
    j["endpoint_b"] = curve.endpoint_b;
    j["max_error"] = s.max_error;
    j["t_at_max"] = s.t_at_max;
    j["auc"] = s.auc;
    j["t_drop"] = s.t_drop;
    return j;
}

} // namespace bprl
