#pragma once

// Independent reference implementations the test suite checks the library
// against. Everything here is deliberately written the slow, obvious way and
// shares no code with the implementations under test.

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <specmatch/mesh.hpp>

namespace oracles {

// Dense cotangent stiffness matrix assembled per-triangle from edge lengths
// (law of cosines), not from vector cross products.
Eigen::MatrixXd dense_cotan_laplacian(const specmatch::Mesh& mesh);

// Dense generalized symmetric eigensolve of (L, diag(mass)); ascending values.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> dense_generalized_eig(const Eigen::MatrixXd& L,
                                                                  const Eigen::VectorXd& mass);

// Heat kernel signature entry by direct summation over eigenpairs.
double hks_entry_direct(const Eigen::MatrixXd& phi, const Eigen::VectorXd& lambda, Eigen::Index x,
                        double t);

// All-pairs shortest paths over the mesh edge graph by Floyd-Warshall.
Eigen::MatrixXd floyd_warshall(const specmatch::Mesh& mesh);

// Nearest row of `candidates` for every row of `queries` (squared Euclidean,
// lowest index wins ties), by exhaustive scan.
std::vector<int> brute_nn(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& candidates);

// Indices of the p largest entries via a full stable sort on (value desc,
// index asc).
std::vector<int> topk_by_sort(const Eigen::RowVectorXd& row, int p);

// Regularized functional-map fit solved as one dense k^2 x k^2 normal-equation
// system derived from the vectorized objective.
Eigen::MatrixXd baseline_fmap_dense(const Eigen::MatrixXd& desc_x, const Eigen::MatrixXd& desc_y,
                                    const Eigen::VectorXd& lambda_x, const Eigen::VectorXd& lambda_y,
                                    double lambda_reg);

// Cross-shape contrastive loss evaluated directly per row: sort, mean of the
// top p, log-sum-exp over the rest.
double cross_loss_direct(const Eigen::MatrixXd& sim, int p, double tau);

// Self contrastive loss evaluated directly from a feature matrix.
double self_loss_direct(const Eigen::MatrixXd& features, int p, double tau);

// Plain scalar Adam trajectory for a single parameter; returns the parameter
// value after applying the given gradients in order.
double scalar_adam(double x0, const std::vector<double>& grads, double lr, double beta1, double beta2,
                   double eps);

}  // namespace oracles
