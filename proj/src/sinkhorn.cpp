#include "fairsinkhorn/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fairsinkhorn/error.hpp"

namespace fairsinkhorn {

std::string to_string(CostKind kind) {
    return kind == CostKind::absolute ? "absolute" : "squared";
}

CostKind cost_kind_from_string(const std::string& name) {
    if (name == "absolute") return CostKind::absolute;
    if (name == "squared") return CostKind::squared;
    throw ConfigError("unknown cost kind '" + name + "' (expected absolute or squared)");
}

EmpiricalDistribution EmpiricalDistribution::uniform(Eigen::VectorXd support) {
    EmpiricalDistribution d;
    d.weights = Eigen::VectorXd::Constant(support.size(), 1.0 / static_cast<double>(support.size()));
    d.support = std::move(support);
    d.validate();
    return d;
}

EmpiricalDistribution EmpiricalDistribution::point_mass(double value) {
    EmpiricalDistribution d;
    d.support = Eigen::VectorXd::Constant(1, value);
    d.weights = Eigen::VectorXd::Constant(1, 1.0);
    return d;
}

void EmpiricalDistribution::validate() const {
    if (support.size() == 0 || support.size() != weights.size()) {
        throw DataError("empirical distribution needs matching support/weights of length >= 1");
    }
    if (!support.allFinite() || !weights.allFinite()) {
        throw DataError("empirical distribution has non-finite entries");
    }
    if ((weights.array() <= 0.0).any()) {
        throw DataError("empirical distribution weights must be strictly positive");
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12) {
        throw DataError("empirical distribution weights must sum to 1 within 1e-12");
    }
}

void SinkhornConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("sinkhorn epsilon must be positive");
    if (max_iters <= 0) throw ConfigError("sinkhorn max_iters must be positive");
    if (!(tolerance > 0.0)) throw ConfigError("sinkhorn tolerance must be positive");
}

CostMatrix build_cost(const EmpiricalDistribution& a, const EmpiricalDistribution& b, CostKind kind) {
    a.validate();
    b.validate();
    CostMatrix cost;
    cost.kind = kind;
    cost.entries.resize(a.size(), b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            const double diff = a.support[i] - b.support[j];
            cost.entries(i, j) = kind == CostKind::absolute ? std::abs(diff) : diff * diff;
        }
    }
    return cost;
}

namespace {

[[noreturn]] void throw_nonfinite(double epsilon) {
    std::ostringstream msg;
    msg << "sinkhorn: non-finite intermediate values at epsilon=" << epsilon
        << "; epsilon is too small for the cost scale";
    throw NumericError(msg.str());
}

// A solve at one fixed absolute epsilon, warm-started from the duals in
// `plan`. Potentials are kept in cost units so they transfer between
// epsilon stages. Updates, for row potential f and column potential g:
//   f_i = -eps * LSE_j[ log b_j + (g_j - C_ij) / eps ]
//   g_j = -eps * LSE_i[ log a_i + (f_i - C_ij) / eps ]
// After a g update the column marginals are exact; the row violation of
// the current pair falls out of the next f pass for free.
struct LogDomainSolver {
    const Eigen::VectorXd& a;
    const Eigen::VectorXd& b;
    const Eigen::MatrixXd& cost;
    Eigen::VectorXd log_a;
    Eigen::VectorXd log_b;

    LogDomainSolver(const Eigen::VectorXd& a_in, const Eigen::VectorXd& b_in,
                    const Eigen::MatrixXd& cost_in)
        : a(a_in), b(b_in), cost(cost_in),
          log_a(a_in.array().log()), log_b(b_in.array().log()) {}

    Eigen::VectorXd update_f(const Eigen::VectorXd& g, double eps) const {
        Eigen::MatrixXd t = (-cost).rowwise() + g.transpose();
        t /= eps;
        t.rowwise() += log_b.transpose();
        const Eigen::VectorXd row_max = t.rowwise().maxCoeff();
        const Eigen::VectorXd lse =
            ((t.colwise() - row_max).array().exp().rowwise().sum().log() + row_max.array()).matrix();
        return -eps * lse;
    }

    Eigen::VectorXd update_g(const Eigen::VectorXd& f, double eps) const {
        Eigen::MatrixXd t = (-cost).colwise() + f;
        t /= eps;
        t.colwise() += log_a;
        const Eigen::RowVectorXd col_max = t.colwise().maxCoeff();
        const Eigen::RowVectorXd lse =
            ((t.rowwise() - col_max).array().exp().colwise().sum().log() + col_max.array()).matrix();
        return (-eps * lse).transpose();
    }

    // Runs until the marginal violation drops below tol or the iteration
    // budget is exhausted. Returns iterations consumed.
    int run(Eigen::VectorXd& f, Eigen::VectorXd& g, double eps, double tol, int budget,
            bool& converged) const {
        converged = false;
        bool g_fresh = false;
        for (int iter = 1; iter <= budget; ++iter) {
            const Eigen::VectorXd f_next = update_f(g, eps);
            if (!f_next.allFinite()) throw_nonfinite(eps);
            if (g_fresh) {
                // Row sums of the current plan are a_i * exp((f_i - f_next_i) / eps).
                const double violation =
                    (a.array() * (((f - f_next) / eps).array().exp() - 1.0)).abs().maxCoeff();
                if (violation < tol) {
                    converged = true;
                    return iter - 1;
                }
            }
            f = f_next;
            g = update_g(f, eps);
            if (!g.allFinite()) throw_nonfinite(eps);
            g_fresh = true;
        }
        return budget;
    }
};

double resolve_epsilon(const SinkhornConfig& cfg, const Eigen::MatrixXd& cost) {
    if (!cfg.relative_epsilon) return cfg.epsilon;
    return cfg.epsilon * cost.mean();
}

// Feasible zero-cost shortcut: when every cost entry is zero the product
// coupling a x b is optimal with value exactly zero.
bool is_degenerate(const Eigen::MatrixXd& cost) {
    return cost.maxCoeff() <= 0.0;
}

TransportPlan product_plan(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    TransportPlan plan;
    plan.coupling = a * b.transpose();
    plan.dual_u = Eigen::VectorXd::Zero(a.size());
    plan.dual_v = Eigen::VectorXd::Zero(b.size());
    plan.iterations_used = 0;
    plan.converged = true;
    return plan;
}

TransportPlan solve_at_epsilon(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                               const Eigen::MatrixXd& cost, double eps, const SinkhornConfig& cfg) {
    if (is_degenerate(cost)) {
        return product_plan(a.weights, b.weights);
    }
    if (!(eps > 0.0) || !std::isfinite(eps)) throw_nonfinite(eps);

    LogDomainSolver solver(a.weights, b.weights, cost);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(a.size());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(b.size());

    int used = 0;
    const double mean_cost = cost.mean();

    // Epsilon scaling: anneal from the cost scale down to the target with
    // warm-started potentials. Cuts the iteration count badly needed for
    // small epsilon; skipped when the target is already at the cost scale.
    if (eps < 0.5 * mean_cost) {
        const int phase_budget = std::max(1, std::min(100, cfg.max_iters / 8));
        const double warm_tol = std::max(cfg.tolerance, 1e-4);
        double eps_k = mean_cost;
        while (eps_k > eps && used + phase_budget < cfg.max_iters) {
            bool phase_converged = false;
            used += solver.run(f, g, eps_k, warm_tol, phase_budget, phase_converged);
            eps_k = std::max(eps, eps_k / 3.0);
        }
    }

    TransportPlan plan;
    plan.iterations_used = used;
    plan.iterations_used += solver.run(f, g, eps, cfg.tolerance,
                                       std::max(1, cfg.max_iters - used), plan.converged);
    plan.dual_u = f;
    plan.dual_v = g;

    Eigen::MatrixXd exponent = ((-cost).colwise() + f).rowwise() + g.transpose();
    exponent /= eps;
    exponent.colwise() += solver.log_a;
    exponent.rowwise() += solver.log_b.transpose();
    plan.coupling = exponent.array().exp().matrix();
    if (!plan.coupling.allFinite()) throw_nonfinite(eps);
    return plan;
}

// Primal value of a computed plan: <plan, C> + eps * KL(plan | a x b).
// The KL summand reduces to plan_ij * (f_i + g_j - C_ij) / eps for plans
// of the exponential form, which avoids logs of tiny entries.
double primal_value(const TransportPlan& plan, const Eigen::MatrixXd& cost, double eps) {
    if (is_degenerate(cost)) return 0.0; // product plan, value 0; eps may be 0 here
    const double transport = (plan.coupling.array() * cost.array()).sum();
    const Eigen::MatrixXd fg =
        ((-cost).colwise() + plan.dual_u).rowwise() + plan.dual_v.transpose();
    const double entropy = (plan.coupling.array() * fg.array()).sum() / eps;
    return transport + eps * entropy;
}

struct RawSolve {
    TransportPlan plan;
    double value = 0.0;
};

RawSolve raw_solve(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double eps,
                   const SinkhornConfig& cfg) {
    const CostMatrix cost = build_cost(a, b, cfg.cost_kind);
    RawSolve out;
    out.plan = solve_at_epsilon(a, b, cost.entries, eps, cfg);
    out.value = primal_value(out.plan, cost.entries, eps);
    return out;
}

// Derivative of the ground cost with respect to its first argument.
double cost_derivative(double p, double q, CostKind kind) {
    const double diff = p - q;
    if (kind == CostKind::squared) return 2.0 * diff;
    if (diff > 0.0) return 1.0;
    if (diff < 0.0) return -1.0;
    return 0.0;
}

// Envelope-rule gradient pieces of <plan, C(source, target)>: the plan is
// held fixed, so each support point collects plan-weighted cost slopes.
void accumulate_plan_gradient(const TransportPlan& plan, const EmpiricalDistribution& source,
                              const EmpiricalDistribution& target, CostKind kind, double scale,
                              Eigen::VectorXd& grad_source, Eigen::VectorXd& grad_target) {
    for (Eigen::Index i = 0; i < source.size(); ++i) {
        for (Eigen::Index j = 0; j < target.size(); ++j) {
            const double slope = cost_derivative(source.support[i], target.support[j], kind);
            const double mass = plan.coupling(i, j);
            grad_source[i] += scale * mass * slope;
            grad_target[j] -= scale * mass * slope;
        }
    }
}

} // namespace

TransportPlan sinkhorn_plan(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                            const SinkhornConfig& cfg) {
    cfg.validate();
    const CostMatrix cost = build_cost(a, b, cfg.cost_kind);
    return solve_at_epsilon(a, b, cost.entries, resolve_epsilon(cfg, cost.entries), cfg);
}

double sinkhorn_distance(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                         const SinkhornConfig& cfg) {
    cfg.validate();
    const CostMatrix cross = build_cost(a, b, cfg.cost_kind);
    const double eps = resolve_epsilon(cfg, cross.entries);

    if (!cfg.debias) {
        const TransportPlan plan = solve_at_epsilon(a, b, cross.entries, eps, cfg);
        return primal_value(plan, cross.entries, eps);
    }

    if (is_degenerate(cross.entries)) return 0.0;
    const TransportPlan plan_ab = solve_at_epsilon(a, b, cross.entries, eps, cfg);
    const double w_ab = primal_value(plan_ab, cross.entries, eps);
    const double w_aa = raw_solve(a, a, eps, cfg).value;
    const double w_bb = raw_solve(b, b, eps, cfg).value;
    return std::max(0.0, w_ab - 0.5 * (w_aa + w_bb));
}

double exact_wasserstein_1d(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                            CostKind kind) {
    a.validate();
    b.validate();

    std::vector<Eigen::Index> order_a(a.size()), order_b(b.size());
    std::iota(order_a.begin(), order_a.end(), 0);
    std::iota(order_b.begin(), order_b.end(), 0);
    std::sort(order_a.begin(), order_a.end(),
              [&](Eigen::Index i, Eigen::Index j) { return a.support[i] < a.support[j]; });
    std::sort(order_b.begin(), order_b.end(),
              [&](Eigen::Index i, Eigen::Index j) { return b.support[i] < b.support[j]; });

    double total = 0.0;
    std::size_t i = 0, j = 0;
    double remaining_a = a.weights[order_a[0]];
    double remaining_b = b.weights[order_b[0]];
    while (i < order_a.size() && j < order_b.size()) {
        const double diff = a.support[order_a[i]] - b.support[order_b[j]];
        const double unit = kind == CostKind::absolute ? std::abs(diff) : diff * diff;
        if (remaining_a < remaining_b) {
            total += remaining_a * unit;
            remaining_b -= remaining_a;
            if (++i < order_a.size()) remaining_a = a.weights[order_a[i]];
        } else if (remaining_b < remaining_a) {
            total += remaining_b * unit;
            remaining_a -= remaining_b;
            if (++j < order_b.size()) remaining_b = b.weights[order_b[j]];
        } else {
            total += remaining_a * unit;
            if (++i < order_a.size()) remaining_a = a.weights[order_a[i]];
            if (++j < order_b.size()) remaining_b = b.weights[order_b[j]];
        }
    }
    return total;
}

SupportGradients sinkhorn_grad_support(const EmpiricalDistribution& a,
                                       const EmpiricalDistribution& b, const SinkhornConfig& cfg) {
    cfg.validate();
    const CostMatrix cross = build_cost(a, b, cfg.cost_kind);
    const double eps = resolve_epsilon(cfg, cross.entries);

    SupportGradients grads;
    grads.source = Eigen::VectorXd::Zero(a.size());
    grads.target = Eigen::VectorXd::Zero(b.size());

    if (cfg.debias && is_degenerate(cross.entries)) {
        // Identical supports: the divergence sits at its minimum.
        return grads;
    }

    const TransportPlan plan_ab = solve_at_epsilon(a, b, cross.entries, eps, cfg);
    accumulate_plan_gradient(plan_ab, a, b, cfg.cost_kind, 1.0, grads.source, grads.target);

    if (cfg.debias) {
        // Self terms: both marginals share the same support vector, so the
        // source and target contributions both land on it.
        const CostMatrix cost_aa = build_cost(a, a, cfg.cost_kind);
        const TransportPlan plan_aa = solve_at_epsilon(a, a, cost_aa.entries, eps, cfg);
        accumulate_plan_gradient(plan_aa, a, a, cfg.cost_kind, -0.5, grads.source, grads.source);

        const CostMatrix cost_bb = build_cost(b, b, cfg.cost_kind);
        const TransportPlan plan_bb = solve_at_epsilon(b, b, cost_bb.entries, eps, cfg);
        accumulate_plan_gradient(plan_bb, b, b, cfg.cost_kind, -0.5, grads.target, grads.target);
    }
    return grads;
}

} // namespace fairsinkhorn
