#pragma once

#include <Eigen/Dense>

#include <string>

namespace fairsinkhorn {

enum class CostKind {
    absolute, // c(p, q) = |p - q|
    squared,  // c(p, q) = (p - q)^2
};

std::string to_string(CostKind kind);
CostKind cost_kind_from_string(const std::string& name);

// Weighted finite support of scalar values. Weights are strictly positive
// and sum to one within 1e-12.
struct EmpiricalDistribution {
    Eigen::VectorXd support;
    Eigen::VectorXd weights;

    static EmpiricalDistribution uniform(Eigen::VectorXd support);
    static EmpiricalDistribution point_mass(double value);

    Eigen::Index size() const { return support.size(); }
    void validate() const;
};

struct CostMatrix {
    Eigen::MatrixXd entries;
    CostKind kind = CostKind::squared;
};

struct SinkhornConfig {
    // Entropic regularization strength. When relative_epsilon is set the
    // effective value is epsilon * mean(cost matrix), resolved per solve;
    // a debiased evaluation resolves it once against the cross cost so all
    // three terms share one epsilon.
    double epsilon = 0.1;
    bool relative_epsilon = true;
    int max_iters = 1000;
    // Stop when the largest absolute marginal violation drops below this.
    double tolerance = 1e-6;
    CostKind cost_kind = CostKind::squared;
    // false: raw entropic cost <plan, C> + eps * KL(plan | a x b).
    // true:  W(a,b) - (W(a,a) + W(b,b)) / 2, clamped at zero.
    bool debias = false;

    void validate() const;
    bool operator==(const SinkhornConfig&) const = default;
};

struct TransportPlan {
    Eigen::MatrixXd coupling;
    Eigen::VectorXd dual_u;
    Eigen::VectorXd dual_v;
    int iterations_used = 0;
    bool converged = false;
};

// Gradients of sinkhorn_distance with respect to the two support vectors.
struct SupportGradients {
    Eigen::VectorXd source;
    Eigen::VectorXd target;
};

CostMatrix build_cost(const EmpiricalDistribution& a, const EmpiricalDistribution& b, CostKind kind);

// Log-domain stabilized Sinkhorn iterations with an epsilon-scaling warm
// start. Throws NumericError naming epsilon if values leave the finite
// range despite stabilization.
TransportPlan sinkhorn_plan(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                            const SinkhornConfig& cfg);

double sinkhorn_distance(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                         const SinkhornConfig& cfg);

// Exact optimal transport cost between 1-D distributions via quantile
// coupling: merge cumulative weights, match slabs in sorted order, sum
// slab mass times ground cost. Independent of the Sinkhorn solver.
double exact_wasserstein_1d(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                            CostKind kind);

// Fixed-plan (envelope) gradients: d/dp_i = sum_j plan_ij dc(p_i,q_j)/dp_i,
// with the self-term plans included when cfg.debias is set. Epsilon is
// treated as a constant of the solve.
SupportGradients sinkhorn_grad_support(const EmpiricalDistribution& a,
                                       const EmpiricalDistribution& b, const SinkhornConfig& cfg);

} // namespace fairsinkhorn
