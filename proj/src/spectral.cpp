#include "causalnet/spectral.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "causalnet/errors.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::netcore {

namespace {

// Lloyd iterations with k-means++ seeding on the rows of points.
std::vector<int> kmeans(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng) {
    const int n = static_cast<int>(points.rows());
    Eigen::MatrixXd centers(k, points.cols());
    std::uniform_int_distribution<int> pick(0, n - 1);
    centers.row(0) = points.row(pick(rng));
    Eigen::VectorXd dist2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        double total = dist2.sum();
        int chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> unif(0.0, total);
            double u = unif(rng);
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += dist2(i);
                if (acc >= u) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        centers.row(c) = points.row(chosen);
        dist2 = dist2.cwiseMin(
            (points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> labels(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                double d = (points.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0)
            break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(labels[i]) += points.row(i);
            ++counts[labels[i]];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0)
                centers.row(c) = sums.row(c) / counts[c];
            else
                centers.row(c) = points.row(pick(rng));
    }
    return labels;
}

} // namespace

std::vector<int> spectral_clusters(const InfluenceNetwork& net, int k,
                                   std::uint64_t seed) {
    const int n = net.size();
    if (k < 1)
        throw ConfigError("cluster count must be at least 1");
    if (k > n)
        throw ConfigError("cluster count exceeds node count");
    if (k == 1)
        return std::vector<int>(n, 0);

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (const auto& [i, j, c] : net.edges()) {
        w(i, j) = 1.0;
        w(j, i) = 1.0;
    }
    Eigen::VectorXd deg = w.rowwise().sum();
    Eigen::VectorXd dinv_sqrt(n);
    for (int i = 0; i < n; ++i)
        dinv_sqrt(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;
    Eigen::MatrixXd norm = dinv_sqrt.asDiagonal() * w * dinv_sqrt.asDiagonal();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(norm);
    if (solver.info() != Eigen::Success)
        throw NumericError("spectral clustering eigendecomposition failed");
    // Eigenvalues ascending; take the top-k eigenvectors.
    Eigen::MatrixXd basis = solver.eigenvectors().rightCols(k);
    for (int i = 0; i < n; ++i) {
        double norm_i = basis.row(i).norm();
        if (norm_i > 0.0)
            basis.row(i) /= norm_i;
    }
    auto rng = make_rng(seed, {0x73706563ULL});
    return kmeans(basis, k, rng);
}

} // namespace causalnet::netcore
