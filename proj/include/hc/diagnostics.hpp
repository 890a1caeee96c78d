#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hc/chunker.hpp"
#include "hc/errors.hpp"
#include "hc/numerics.hpp"
#include "hc/rnn.hpp"
#include "hc/rng.hpp"
#include "hc/serialize.hpp"

namespace hc {

inline double median_of(Vec v) {
    if (v.empty()) throw ConfigError("median_of: empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// One probed lag: norms of the final-step loss gradient with respect to the
// hidden state (primary) and the input (also recorded) L steps before the end.
struct LagRecord {
    long lag = 0;
    double mean_hidden = 0.0;
    double median_hidden = 0.0;
    double mean_input = 0.0;
    double median_input = 0.0;
    bool explosion = false;
};

struct GradientReport {
    std::vector<LagRecord> rows;  // sorted by lag, strictly increasing
    bool explosion_flag = false;
    long first_explosion_lag = -1;
    long seq_len = 0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    double explosion_cap = 1e8;
};

// Measure how strongly the loss at the final step still feels state L steps
// back: cross-entropy against a random target, random one-hot inputs, full
// BPTT, norms read off the backward trace. Values that blow past the cap (or
// leave the finite range, which is then reported as the largest double) raise
// the explosion flag instead of poisoning the table.
inline GradientReport gradient_norm_by_lag(const RnnParams& p, long seq_len,
                                           std::vector<long> probe_lags, Rng& rng,
                                           std::size_t n_samples, double explosion_cap = 1e8) {
    if (seq_len < 1) throw ConfigError("gradient_norm_by_lag: seq_len must be positive");
    if (n_samples < 1) throw ConfigError("gradient_norm_by_lag: need at least one sample");
    if (probe_lags.empty()) throw ConfigError("gradient_norm_by_lag: no probe lags");
    std::sort(probe_lags.begin(), probe_lags.end());
    probe_lags.erase(std::unique(probe_lags.begin(), probe_lags.end()), probe_lags.end());
    for (long lag : probe_lags)
        if (lag < 0 || lag >= seq_len)
            throw ConfigError("gradient_norm_by_lag: lag " + std::to_string(lag) +
                              " outside [0, " + std::to_string(seq_len - 1) + "]");

    const std::size_t input_dim = p.w_in.cols;
    const std::size_t output_dim = p.w_out.rows;

    GradientReport report;
    report.seq_len = seq_len;
    report.n_samples = n_samples;
    report.seed = rng.seed();
    report.explosion_cap = explosion_cap;

    std::vector<Vec> hidden_samples(probe_lags.size());
    std::vector<Vec> input_samples(probe_lags.size());
    std::vector<bool> nonfinite(probe_lags.size(), false);

    for (std::size_t s = 0; s < n_samples; ++s) {
        std::vector<Vec> xs(static_cast<std::size_t>(seq_len), Vec(input_dim, 0.0));
        for (auto& x : xs) x[rng.uniform_int(input_dim)] = 1.0;
        const std::size_t target = rng.uniform_int(output_dim);

        UnrollTape tape = unroll(p, xs);
        std::vector<Vec> dlogits(tape.length(), Vec(output_dim, 0.0));
        dlogits.back() = softmax(tape.steps.back().logits);
        dlogits.back()[target] -= 1.0;

        BackpropTrace trace;
        backprop_through_time(p, tape, dlogits, &trace);

        for (std::size_t li = 0; li < probe_lags.size(); ++li) {
            const std::size_t t = static_cast<std::size_t>(seq_len - 1 - probe_lags[li]);
            double hn = trace.dh_norm[t];
            double xn = trace.dx_norm[t];
            if (!std::isfinite(hn)) {
                hn = DBL_MAX;
                nonfinite[li] = true;
            }
            if (!std::isfinite(xn)) {
                xn = DBL_MAX;
                nonfinite[li] = true;
            }
            hidden_samples[li].push_back(hn);
            input_samples[li].push_back(xn);
        }
    }

    const double inv_n = 1.0 / static_cast<double>(n_samples);
    for (std::size_t li = 0; li < probe_lags.size(); ++li) {
        LagRecord row;
        row.lag = probe_lags[li];
        for (double v : hidden_samples[li]) row.mean_hidden += v * inv_n;
        for (double v : input_samples[li]) row.mean_input += v * inv_n;
        row.median_hidden = median_of(hidden_samples[li]);
        row.median_input = median_of(input_samples[li]);
        row.explosion = nonfinite[li] || row.mean_hidden > explosion_cap;
        if (row.explosion && !report.explosion_flag) {
            report.explosion_flag = true;
            report.first_explosion_lag = row.lag;
        }
        report.rows.push_back(row);
    }
    return report;
}

// Mean stream length at each stage of the stack: entry 0 is the raw length,
// entry k the input of level k, the last entry the top level's output. The
// second-to-last entry is the unroll length classification BPTT walks.
inline std::vector<double> effective_path_length(const Hierarchy& h,
                                                 const std::vector<SymbolSequence>& corpus) {
    if (h.levels.empty()) throw ConfigError("effective_path_length: empty hierarchy");
    if (corpus.empty()) throw ConfigError("effective_path_length: empty corpus");
    std::vector<double> out(static_cast<std::size_t>(h.depth()) + 1, 0.0);
    for (const SymbolSequence& s : corpus) {
        ReducedSequence r = lift(s);
        out[0] += static_cast<double>(r.events.size());
        for (int k = 0; k < h.depth(); ++k) {
            r = reduce(h.levels[static_cast<std::size_t>(k)], r);
            out[static_cast<std::size_t>(k) + 1] += static_cast<double>(r.events.size());
        }
    }
    for (double& v : out) v /= static_cast<double>(corpus.size());
    return out;
}

inline std::string gradient_report_csv(const GradientReport& r) {
    std::string out = "lag,mean_norm,median_norm,explosion_flag\n";
    for (const LagRecord& row : r.rows) {
        out += std::to_string(row.lag) + "," + format_double(row.mean_hidden) + "," +
               format_double(row.median_hidden) + "," + (row.explosion ? "1" : "0") + "\n";
    }
    return out;
}

// Sidecar with everything the CSV leaves out; the CLI adds its own config
// snapshot under "config".
inline json gradient_report_json(const GradientReport& r) {
    json j;
    j["seq_len"] = r.seq_len;
    j["n_samples"] = r.n_samples;
    j["seed"] = r.seed;
    j["explosion_cap"] = r.explosion_cap;
    j["explosion_flag"] = r.explosion_flag;
    j["first_explosion_lag"] = r.first_explosion_lag;
    json rows = json::array();
    for (const LagRecord& row : r.rows)
        rows.push_back({{"lag", row.lag},
                        {"mean_hidden", row.mean_hidden},
                        {"median_hidden", row.median_hidden},
                        {"mean_input", row.mean_input},
                        {"median_input", row.median_input},
                        {"explosion", row.explosion}});
    j["rows"] = rows;
    return j;
}

}  // namespace hc
