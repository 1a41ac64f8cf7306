#include "textdemand/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <json.hpp>

#include "textdemand/errors.hpp"
#include "textdemand/hashing.hpp"

namespace textdemand {

std::size_t JointTextMatrix::n_flagged() const {
    return static_cast<std::size_t>(std::count(missing_block.begin(), missing_block.end(), true));
}

JointTextMatrix build_joint_matrix(const FrequencyMatrix& title, const FrequencyMatrix& desc) {
    if (title.row_ids != desc.row_ids) throw InvalidInput("title and description matrices list different rows");
    JointTextMatrix out;
    out.row_ids = title.row_ids;
    out.title_cols = title.n_cols;
    out.desc_cols = desc.n_cols;
    out.column_hash = sha256_hex("joint\n" + title.vocab_hash + "\n" + desc.vocab_hash + "\n" +
                                 std::to_string(title.n_cols) + "\n" + std::to_string(desc.n_cols));
    const auto n = title.n_rows();
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t k = 0; k < title.rows[i].cols.size(); ++k) {
            trips.emplace_back(row, static_cast<Eigen::Index>(title.rows[i].cols[k]), title.rows[i].vals[k]);
        }
        for (std::size_t k = 0; k < desc.rows[i].cols.size(); ++k) {
            trips.emplace_back(row, static_cast<Eigen::Index>(title.n_cols + desc.rows[i].cols[k]), desc.rows[i].vals[k]);
        }
        out.missing_block.push_back(title.rows[i].empty() || desc.rows[i].empty());
    }
    out.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(title.n_cols + desc.n_cols));
    out.matrix.setFromTriplets(trips.begin(), trips.end());
    out.matrix.makeCompressed();
    return out;
}

namespace {

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& y) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

}  // namespace

PcBasis fit_tsvd(const JointTextMatrix& joint, int k, const TsvdOptions& options) {
    const auto& a = joint.matrix;
    const auto m = a.rows();
    const auto n = a.cols();
    if (k < 1 || k > std::min(m, n)) {
        throw InvalidInput("k = " + std::to_string(k) + " outside [1, min(rows, cols) = " +
                           std::to_string(std::min(m, n)) + "]");
    }
    const auto l = std::min<Eigen::Index>(k + options.oversampling, std::min(m, n));

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd omega(n, l);
    for (Eigen::Index j = 0; j < l; ++j)
        for (Eigen::Index i = 0; i < n; ++i) omega(i, j) = gauss(rng);

    Eigen::MatrixXd q = orthonormal_basis(a * omega);
    const double frob2 = a.squaredNorm();

    PcBasis basis;
    basis.k = k;
    basis.column_hash = joint.column_hash;
    Eigen::VectorXd sigma;
    Eigen::MatrixXd u, v;
    Eigen::VectorXd resid(k);
    // Top-k triplets of B = Q'A. The loop uses the l x l Gram matrix, which is
    // cheap; the accepted subspace is finished with a full SVD of B.
    auto triplets = [&](bool exact) {
        const Eigen::MatrixXd b = (a.transpose() * q).transpose();
        if (exact) {
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
            sigma = svd.singularValues().head(k);
            u = q * svd.matrixU().leftCols(k);
            v = svd.matrixV().leftCols(k);
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b * b.transpose());
            const auto lcols = b.rows();
            sigma.resize(k);
            Eigen::MatrixXd ub(lcols, k);
            for (int i = 0; i < k; ++i) {
                sigma(i) = std::sqrt(std::max(eig.eigenvalues()(lcols - 1 - i), 0.0));
                ub.col(i) = eig.eigenvectors().col(lcols - 1 - i);
            }
            u = q * ub;
            v = b.transpose() * ub;
            for (int i = 0; i < k; ++i) {
                if (sigma(i) > 0.0) v.col(i) /= sigma(i);
            }
        }
        const Eigen::MatrixXd av = a * v;
        for (int i = 0; i < k; ++i) resid(i) = (av.col(i) - sigma(i) * u.col(i)).norm();
    };
    auto within = [&](double r) { return r <= options.tolerance * sigma(0) || sigma(0) == 0.0; };
    int it = 0;
    for (;;) {
        triplets(false);
        if (it >= options.min_power_iterations && (resid.array().unaryExpr(within)).all()) break;
        if (it >= options.max_iterations) {
            std::vector<std::size_t> bad;
            std::vector<double> r;
            for (int i = 0; i < k; ++i) {
                r.push_back(resid(i));
                if (!within(resid(i))) bad.push_back(static_cast<std::size_t>(i));
            }
            throw ConvergenceError("truncated SVD did not converge in " + std::to_string(options.max_iterations) +
                                       " iterations",
                                   bad, r);
        }
        // One power step: q <- orth(A orth(A' q)).
        q = orthonormal_basis(a * orthonormal_basis(a.transpose() * q));
        ++it;
    }
    triplets(true);

    for (int i = 0; i < k; ++i) {
        Eigen::Index arg = 0;
        v.col(i).cwiseAbs().maxCoeff(&arg);
        if (v(arg, i) < 0.0) v.col(i) = -v.col(i);
    }
    basis.v = v;
    basis.singular_values = sigma;
    basis.explained = frob2 > 0.0 ? Eigen::VectorXd(sigma.array().square() / frob2) : Eigen::VectorXd::Zero(k);
    basis.total_explained = basis.explained.sum();
    basis.iterations = it;
    basis.residuals = resid;
    return basis;
}

Eigen::MatrixXd project(const JointTextMatrix& rows, const PcBasis& basis) {
    if (rows.column_hash != basis.column_hash) {
        throw InvalidInput("rows were built over a different column space than the fitted components");
    }
    if (rows.matrix.cols() != basis.v.rows()) throw InvalidInput("column count differs from the fitted components");
    return rows.matrix * basis.v;
}

namespace {

constexpr const char* kBasisFormat = "textdemand.pc_basis";

}  // namespace

std::string PcBasis::to_json() const {
    nlohmann::json j;
    j["format"] = kBasisFormat;
    j["version"] = 1;
    j["k"] = k;
    j["column_hash"] = column_hash;
    j["iterations"] = iterations;
    j["singular_values"] = std::vector<double>(singular_values.data(), singular_values.data() + singular_values.size());
    j["explained"] = std::vector<double>(explained.data(), explained.data() + explained.size());
    j["total_explained"] = total_explained;
    j["residuals"] = std::vector<double>(residuals.data(), residuals.data() + residuals.size());
    j["n_cols"] = v.rows();
    auto cols = nlohmann::json::array();
    for (Eigen::Index c = 0; c < v.cols(); ++c) cols.push_back(std::vector<double>(v.col(c).data(), v.col(c).data() + v.rows()));
    j["v"] = cols;
    return j.dump();
}

PcBasis PcBasis::from_json(std::string_view text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != kBasisFormat) throw InvalidInput("not a component basis artifact");
    PcBasis b;
    b.k = j.at("k").get<int>();
    b.column_hash = j.at("column_hash").get<std::string>();
    b.iterations = j.at("iterations").get<int>();
    auto vec = [&](const char* key) {
        const auto x = j.at(key).get<std::vector<double>>();
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
    };
    b.singular_values = vec("singular_values");
    b.explained = vec("explained");
    b.residuals = vec("residuals");
    b.total_explained = j.at("total_explained").get<double>();
    const auto n = j.at("n_cols").get<Eigen::Index>();
    b.v.resize(n, b.k);
    const auto& cols = j.at("v");
    if (static_cast<int>(cols.size()) != b.k) throw InvalidInput("component basis: wrong number of vectors");
    for (int c = 0; c < b.k; ++c) {
        const auto x = cols[static_cast<std::size_t>(c)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(x.size()) != n) throw InvalidInput("component basis: ragged vectors");
        b.v.col(c) = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
    }
    return b;
}

}  // namespace textdemand
