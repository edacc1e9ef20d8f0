#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

// <resolv.h> (pulled in by socket headers) defines _res, which Eigen uses
// as a parameter name.
#pragma push_macro("_res")
#undef _res
#include <Eigen/Cholesky>
#include <Eigen/Dense>
#pragma pop_macro("_res")

#include "semir/common.hpp"
#include "semir/corpus.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/fusion.hpp"
#include "semir/metrics.hpp"

namespace semir {

enum class Objective { sent_map, doc_map, doc_f1 };

inline std::string_view to_string(Objective o) {
    switch (o) {
        case Objective::sent_map: return "sent_map";
        case Objective::doc_map: return "doc_map";
        case Objective::doc_f1: return "doc_f1";
    }
    return "?";
}

inline Objective parse_objective(std::string_view s) {
    if (s == "sent_map") return Objective::sent_map;
    if (s == "doc_map") return Objective::doc_map;
    if (s == "doc_f1") return Objective::doc_f1;
    throw ValidationError("unknown objective '" + std::string(s) + "'");
}

struct WeightMetrics {
    double doc_map = 0.0;
    double sent_map = 0.0;
    double doc_f1 = 0.0;
    double sent_f1 = 0.0;

    double get(Objective o) const {
        switch (o) {
            case Objective::sent_map: return sent_map;
            case Objective::doc_map: return doc_map;
            case Objective::doc_f1: return doc_f1;
        }
        return 0.0;
    }

    friend bool operator==(const WeightMetrics&, const WeightMetrics&) = default;
};

/// Scored candidate pools for a labelled query set. Once built, evaluating a
/// weight setting is pure arithmetic over the pools.
struct DevSet {
    std::vector<CandidatePool> pools;
    QuerySet gold;
    RankingParams params;
    EvalConfig eval;

    static DevSet build(const Pipeline& pipeline, const QuerySet& labelled, EvalConfig eval = {}) {
        if (!labelled.all_labelled()) {
            throw ValidationError("dev set contains queries without gold labels");
        }
        DevSet dev{{}, labelled, pipeline.params(), eval};
        for (const auto& e : labelled.entries()) {
            dev.pools.push_back(pipeline.build_pool(e.query));
        }
        return dev;
    }

    void validate() const {
        if (pools.empty()) {
            throw ValidationError("dev set is empty");
        }
        if (!gold.all_labelled()) {
            throw ValidationError("dev set contains queries without gold labels");
        }
        if (pools.size() != gold.size()) {
            throw ValidationError("dev set pools and gold labels differ in size");
        }
    }
};

inline RankedRun fuse_all(const DevSet& dev, const FusionWeights& wts) {
    RankedRun run;
    for (const auto& pool : dev.pools) {
        run.add(fuse(pool, wts, dev.params));
    }
    return run;
}

inline WeightMetrics evaluate_weights(const FusionWeights& wts, const DevSet& dev) {
    wts.validate();
    dev.validate();
    const EvalReport r = evaluate_run(fuse_all(dev, wts), dev.gold, dev.eval);
    return {r.docs.map, r.snippets.map, r.docs.mean_f1, r.snippets.mean_f1};
}

// ---------------------------------------------------------------------------
// Search strategies

struct GridSearch {
    double step = 0.2;
};

struct CoarseFineSearch {
    double step1 = 0.2;
    double step2 = 0.05;
    double window = 0.2;
};

struct GuidedSearch {
    std::size_t budget = 200;
    std::uint64_t seed = 0;
};

using SearchStrategy = std::variant<GridSearch, CoarseFineSearch, GuidedSearch>;

inline void validate_strategy(const SearchStrategy& s) {
    auto step_ok = [](double x) { return x > 0.0 && x <= 1.0; };
    if (const auto* g = std::get_if<GridSearch>(&s)) {
        if (!step_ok(g->step)) throw ValidationError("grid step must be in (0,1]");
    } else if (const auto* c = std::get_if<CoarseFineSearch>(&s)) {
        if (!step_ok(c->step1) || !step_ok(c->step2)) throw ValidationError("grid steps must be in (0,1]");
        if (!(c->window > 0.0)) throw ValidationError("coarse_fine window must be > 0");
    } else if (std::get<GuidedSearch>(s).budget < 1) {
        throw ValidationError("guided budget must be >= 1");
    }
}

inline detail::Json strategy_to_json(const SearchStrategy& s) {
    if (const auto* g = std::get_if<GridSearch>(&s)) {
        return {{"type", "grid"}, {"step", g->step}};
    }
    if (const auto* c = std::get_if<CoarseFineSearch>(&s)) {
        return {{"type", "coarse_fine"}, {"step1", c->step1}, {"step2", c->step2}, {"window", c->window}};
    }
    const auto& g = std::get<GuidedSearch>(s);
    return {{"type", "guided"}, {"budget", g.budget}, {"seed", g.seed}};
}

inline SearchStrategy strategy_from_json(const detail::Json& j, const std::string& path = "$") {
    using namespace detail;
    const std::string type = require_string(j, "type", path);
    SearchStrategy s;
    if (type == "grid") {
        s = GridSearch{j.contains("step") ? require_number(j, "step", path) : 0.2};
    } else if (type == "coarse_fine") {
        CoarseFineSearch c;
        if (j.contains("step1")) c.step1 = require_number(j, "step1", path);
        if (j.contains("step2")) c.step2 = require_number(j, "step2", path);
        if (j.contains("window")) c.window = require_number(j, "window", path);
        s = c;
    } else if (type == "guided") {
        GuidedSearch g;
        if (j.contains("budget")) g.budget = static_cast<std::size_t>(require_int(j, "budget", path));
        if (j.contains("seed")) g.seed = static_cast<std::uint64_t>(require_int(j, "seed", path));
        s = g;
    } else {
        throw ValidationError(child_path(path, "type") + ": unknown strategy '" + type + "'");
    }
    validate_strategy(s);
    return s;
}

/// Positions in FusionWeights::flat().
inline constexpr std::array<std::size_t, 4> kAlphaParams{0, 1, 2, 3};
inline constexpr std::array<std::size_t, 5> kDocParams{4, 5, 6, 7, 8};

struct Evaluation {
    FusionWeights weights;
    double value = 0.0;
    WeightMetrics metrics;
};

struct SearchResult {
    FusionWeights best;
    double best_value = 0.0;
    std::vector<Evaluation> evaluated;
};

/// Objective of one weight setting, plus the full metric tuple for the trace.
using WeightObjective = std::function<Evaluation(const FusionWeights&)>;

namespace detail {

inline std::vector<double> lattice(double step) {
    std::vector<double> pts;
    const auto n = static_cast<long>(std::floor(1.0 / step + 1e-9));
    for (long k = 0; k <= n; ++k) {
        pts.push_back(std::min(1.0, static_cast<double>(k) * step));
    }
    if (pts.back() < 1.0 - 1e-12) {
        pts.push_back(1.0);
    }
    return pts;
}

inline FusionWeights with_coords(const FusionWeights& base, std::span<const std::size_t> free,
                                 std::span<const double> coords) {
    auto flat = base.flat();
    for (std::size_t i = 0; i < free.size(); ++i) {
        flat[free[i]] = coords[i];
    }
    return FusionWeights::from_flat(flat);
}

/// Visits the cartesian product of per-dimension point lists, last
/// dimension fastest.
inline void for_each_point(const std::vector<std::vector<double>>& axes,
                           const std::function<void(const std::vector<double>&)>& fn) {
    std::vector<std::size_t> idx(axes.size(), 0);
    std::vector<double> point(axes.size());
    while (true) {
        for (std::size_t d = 0; d < axes.size(); ++d) {
            point[d] = axes[d][idx[d]];
        }
        fn(point);
        std::size_t d = axes.size();
        while (d > 0) {
            --d;
            if (++idx[d] < axes[d].size()) {
                break;
            }
            idx[d] = 0;
            if (d == 0) {
                return;
            }
        }
        if (axes.empty()) {
            return;
        }
    }
}

class SearchRun {
public:
    SearchRun(const FusionWeights& init, std::span<const std::size_t> free, const WeightObjective& objective)
        : init_(init), free_(free.begin(), free.end()), objective_(objective) {}

    Evaluation evaluate(std::span<const double> coords) {
        Evaluation e = objective_(with_coords(init_, free_, coords));
        result_.evaluated.push_back(e);
        return e;
    }

    /// Candidates replace the incumbent only on strict improvement.
    void offer(const Evaluation& e) {
        if (!have_best_ || e.value > result_.best_value) {
            result_.best = e.weights;
            result_.best_value = e.value;
            have_best_ = true;
        }
    }

    std::vector<double> coords_of(const FusionWeights& w) const {
        const auto flat = w.flat();
        std::vector<double> c;
        for (std::size_t i : free_) {
            c.push_back(flat[i]);
        }
        return c;
    }

    const FusionWeights& init() const { return init_; }
    std::size_t dim() const { return free_.size(); }
    SearchResult& result() { return result_; }

private:
    FusionWeights init_;
    std::vector<std::size_t> free_;
    const WeightObjective& objective_;
    SearchResult result_;
    bool have_best_ = false;
};

inline void grid_pass(SearchRun& run, const std::vector<std::vector<double>>& axes) {
    bool have = false;
    Evaluation best;
    for_each_point(axes, [&](const std::vector<double>& p) {
        Evaluation e = run.evaluate(p);
        if (!have || e.value > best.value) {
            best = e;
            have = true;
        }
    });
    if (have) {
        run.offer(best);
    }
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

/// Gaussian-process surrogate with a squared-exponential kernel over the
/// evaluated points; picks the candidate of largest expected improvement.
class Surrogate {
public:
    static constexpr double kLengthScale = 0.25;
    static constexpr double kNoise = 1e-6;
    static constexpr double kXi = 0.01;

    Surrogate(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys) : xs_(xs) {
        const auto n = static_cast<Eigen::Index>(xs.size());
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            y(i) = ys[static_cast<std::size_t>(i)];
        }
        mean_ = y.mean();
        const double var = (y.array() - mean_).square().mean();
        scale_ = var > 1e-18 ? std::sqrt(var) : 1.0;
        y = (y.array() - mean_) / scale_;
        best_ = y.maxCoeff();
        Eigen::MatrixXd k(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                k(i, j) = k(j, i) = kernel(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(j)]);
            }
            k(i, i) += kNoise;
        }
        llt_.compute(k);
        alpha_ = llt_.solve(y);
    }

    double expected_improvement(const std::vector<double>& x) const {
        const auto n = static_cast<Eigen::Index>(xs_.size());
        Eigen::VectorXd kx(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            kx(i) = kernel(x, xs_[static_cast<std::size_t>(i)]);
        }
        const double mu = kx.dot(alpha_);
        const Eigen::VectorXd v = llt_.matrixL().solve(kx);
        const double sigma = std::sqrt(std::max(1.0 + kNoise - v.squaredNorm(), 1e-12));
        const double z = (mu - best_ - kXi) / sigma;
        return (mu - best_ - kXi) * normal_cdf(z) + sigma * normal_pdf(z);
    }

private:
    static double kernel(const std::vector<double>& a, const std::vector<double>& b) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            d2 += (a[i] - b[i]) * (a[i] - b[i]);
        }
        return std::exp(-0.5 * d2 / (kLengthScale * kLengthScale));
    }

    std::vector<std::vector<double>> xs_;
    double mean_ = 0.0;
    double scale_ = 1.0;
    double best_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
};

inline void guided_pass(SearchRun& run, const GuidedSearch& g) {
    constexpr std::size_t kCandidates = 200;
    std::mt19937_64 rng(g.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 0.08);
    const std::size_t dim = run.dim();

    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    auto record = [&](const std::vector<double>& x) {
        const Evaluation e = run.evaluate(x);
        run.offer(e);
        xs.push_back(x);
        ys.push_back(e.value);
    };

    record(run.coords_of(run.init()));
    const std::size_t n_random = std::min(g.budget - 1, std::max<std::size_t>(5, 2 * dim));
    for (std::size_t i = 0; i < n_random; ++i) {
        std::vector<double> x(dim);
        for (double& c : x) {
            c = unit(rng);
        }
        record(x);
    }
    while (xs.size() < g.budget) {
        const Surrogate gp(xs, ys);
        const std::vector<double> incumbent = run.coords_of(run.result().best);
        std::vector<double> pick;
        double pick_ei = -1.0;
        for (std::size_t c = 0; c < kCandidates; ++c) {
            std::vector<double> x(dim);
            for (std::size_t d = 0; d < dim; ++d) {
                // half global exploration, half local moves around the incumbent
                x[d] = c % 2 == 0 ? unit(rng) : std::clamp(incumbent[d] + jitter(rng), 0.0, 1.0);
            }
            const double ei = gp.expected_improvement(x);
            if (ei > pick_ei) {
                pick_ei = ei;
                pick = std::move(x);
            }
        }
        record(pick);
    }
}

}  // namespace detail

/// Optimizes the `free` coordinates of FusionWeights::flat(), keeping the
/// rest at their `init` values. The result is never worse than `init`.
inline SearchResult search(const SearchStrategy& strategy, const FusionWeights& init,
                           std::span<const std::size_t> free, const WeightObjective& objective) {
    validate_strategy(strategy);
    init.validate();
    std::vector<bool> seen(9, false);
    for (std::size_t i : free) {
        if (i >= 9 || seen[i]) {
            throw ValidationError("free parameters must be distinct indices below 9");
        }
        seen[i] = true;
    }
    if (free.empty()) {
        throw ValidationError("search needs at least one free parameter");
    }
    auto grid_guard = [&](double step) {
        if (free.size() > 6 && step <= 0.1) {
            throw ValidationError("grid over more than 6 free dimensions with step <= 0.1 is too large");
        }
    };

    detail::SearchRun run(init, free, objective);
    if (const auto* g = std::get_if<GridSearch>(&strategy)) {
        grid_guard(g->step);
        const Evaluation at_init = run.evaluate(run.coords_of(init));
        detail::grid_pass(run, std::vector<std::vector<double>>(free.size(), detail::lattice(g->step)));
        run.offer(at_init);
    } else if (const auto* c = std::get_if<CoarseFineSearch>(&strategy)) {
        grid_guard(c->step1);
        const Evaluation at_init = run.evaluate(run.coords_of(init));
        detail::grid_pass(run, std::vector<std::vector<double>>(free.size(), detail::lattice(c->step1)));
        const std::vector<double> centre = run.coords_of(run.result().best);
        std::vector<std::vector<double>> axes;
        for (double x : centre) {
            std::vector<double> pts;
            const auto n = static_cast<long>(std::floor(c->window / c->step2 + 1e-9));
            for (long k = -n; k <= n; ++k) {
                const double v = x + static_cast<double>(k) * c->step2;
                if (v >= -1e-12 && v <= 1.0 + 1e-12) {
                    pts.push_back(std::clamp(v, 0.0, 1.0));
                }
            }
            axes.push_back(std::move(pts));
        }
        detail::grid_pass(run, axes);
        run.offer(at_init);
    } else {
        detail::guided_pass(run, std::get<GuidedSearch>(strategy));
    }
    return std::move(run.result());
}

inline WeightObjective dev_objective(const DevSet& dev, Objective objective) {
    return [&dev, objective](const FusionWeights& w) {
        const WeightMetrics m = evaluate_weights(w, dev);
        return Evaluation{w, m.get(objective), m};
    };
}

inline SearchResult search(const SearchStrategy& strategy, const FusionWeights& init,
                           std::span<const std::size_t> free, Objective objective, const DevSet& dev) {
    return search(strategy, init, free, dev_objective(dev, objective));
}

// ---------------------------------------------------------------------------
// Alternating optimization

inline FusionWeights balanced_init() { return FusionWeights::balanced(0.5); }

struct CandidateRecord {
    std::size_t seq = 0;
    int iteration = 0;
    char phase = 'E';
    FusionWeights weights;
    Objective objective = Objective::doc_map;
    double value = 0.0;
    WeightMetrics metrics;
};

struct PhaseRecord {
    int iteration = 0;
    char phase = 'E';
    std::size_t tried = 0;
    double best_value = 0.0;
    FusionWeights weights;
    /// M phases only: the phase improved the sentence objective and its
    /// weights became the incumbent.
    bool accepted = false;
};

struct OptTrace {
    std::vector<PhaseRecord> phases;
    std::vector<CandidateRecord> candidates;

    /// m_objective values of accepted M phases, in order.
    std::vector<double> accepted_values() const {
        std::vector<double> out;
        for (const auto& p : phases) {
            if (p.phase == 'M' && p.accepted) {
                out.push_back(p.best_value);
            }
        }
        return out;
    }

    std::string to_jsonl() const {
        std::string out;
        for (const auto& c : candidates) {
            detail::Json j = {{"seq", c.seq},
                              {"iteration", c.iteration},
                              {"phase", std::string(1, c.phase)},
                              {"weights", c.weights.to_json()},
                              {"objective", to_string(c.objective)},
                              {"value", c.value},
                              {"doc_map", c.metrics.doc_map},
                              {"sent_map", c.metrics.sent_map},
                              {"doc_f1", c.metrics.doc_f1},
                              {"sent_f1", c.metrics.sent_f1}};
            out += j.dump() + '\n';
        }
        for (const auto& p : phases) {
            detail::Json j = {{"summary", true},
                              {"iteration", p.iteration},
                              {"phase", std::string(1, p.phase)},
                              {"tried", p.tried},
                              {"best_value", p.best_value},
                              {"weights", p.weights.to_json()},
                              {"accepted", p.accepted}};
            out += j.dump() + '\n';
        }
        return out;
    }
};

struct OptimizeConfig {
    FusionWeights init = balanced_init();
    Objective e_objective = Objective::doc_map;
    Objective m_objective = Objective::sent_map;
    SearchStrategy strategy = GuidedSearch{200, 0};
    int max_iters = 10;
    double epsilon = 1e-9;

    void validate() const {
        init.validate();
        validate_strategy(strategy);
        if (max_iters < 1) {
            throw ValidationError("max_iters must be >= 1");
        }
    }

    detail::Json to_json() const {
        return {{"init", init.to_json()},
                {"e_objective", to_string(e_objective)},
                {"m_objective", to_string(m_objective)},
                {"strategy", strategy_to_json(strategy)},
                {"max_iters", max_iters},
                {"epsilon", epsilon}};
    }

    /// Every key is optional; "init" may be a weights object or "balanced".
    static OptimizeConfig from_json(const detail::Json& j) {
        using namespace detail;
        OptimizeConfig c;
        if (!j.is_object()) {
            throw ParseError("$: optimizer config must be an object");
        }
        if (j.contains("init") && !(j["init"].is_string() && j["init"] == "balanced")) {
            c.init = FusionWeights::from_json(j["init"], "$.init");
        }
        if (j.contains("e_objective")) c.e_objective = parse_objective(require_string(j, "e_objective", "$"));
        if (j.contains("m_objective")) c.m_objective = parse_objective(require_string(j, "m_objective", "$"));
        if (j.contains("strategy")) c.strategy = strategy_from_json(j["strategy"], "$.strategy");
        if (j.contains("max_iters")) c.max_iters = static_cast<int>(require_int(j, "max_iters", "$"));
        if (j.contains("epsilon")) c.epsilon = require_number(j, "epsilon", "$");
        if (j.contains("seed")) {
            if (auto* g = std::get_if<GuidedSearch>(&c.strategy)) {
                g->seed = static_cast<std::uint64_t>(require_int(j, "seed", "$"));
            }
        }
        c.validate();
        return c;
    }
};

struct OptimizeResult {
    FusionWeights best;
    double best_m_value = 0.0;
    OptTrace trace;
};

/// Alternates an E phase (beta and w against e_objective, alpha frozen) and
/// an M phase (alpha against m_objective, beta and w frozen) while the M
/// objective strictly improves, up to max_iters rounds.
inline OptimizeResult alternating_optimize(const OptimizeConfig& cfg, const WeightObjective& e_objective,
                                           const WeightObjective& m_objective) {
    cfg.validate();
    OptimizeResult out{cfg.init, -std::numeric_limits<double>::infinity(), {}};
    FusionWeights current = cfg.init;
    std::size_t seq = 0;

    auto phase_strategy = [&](int iter, char phase) {
        SearchStrategy s = cfg.strategy;
        if (auto* g = std::get_if<GuidedSearch>(&s)) {
            g->seed = mix_seed(g->seed, static_cast<std::uint64_t>(iter * 2 + (phase == 'M' ? 1 : 0)));
        }
        return s;
    };
    auto run_phase = [&](int iter, char phase, std::span<const std::size_t> free, Objective obj,
                         const WeightObjective& fn) {
        SearchResult r = search(phase_strategy(iter, phase), current, free, fn);
        for (const auto& e : r.evaluated) {
            out.trace.candidates.push_back({seq++, iter, phase, e.weights, obj, e.value, e.metrics});
        }
        out.trace.phases.push_back({iter, phase, r.evaluated.size(), r.best_value, r.best, false});
        current = r.best;
        return r.best_value;
    };

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        run_phase(iter, 'E', kDocParams, cfg.e_objective, e_objective);
        const double m_value = run_phase(iter, 'M', kAlphaParams, cfg.m_objective, m_objective);
        if (m_value > out.best_m_value + cfg.epsilon) {
            out.trace.phases.back().accepted = true;
            out.best = current;
            out.best_m_value = m_value;
        } else {
            break;
        }
    }
    return out;
}

inline OptimizeResult alternating_optimize(const OptimizeConfig& cfg, const DevSet& dev) {
    return alternating_optimize(cfg, dev_objective(dev, cfg.e_objective), dev_objective(dev, cfg.m_objective));
}

}  // namespace semir
