#include "textdemand/mnir.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "textdemand/errors.hpp"

namespace textdemand {

std::size_t LevelWordCounts::total_docs() const {
    std::size_t n = 0;
    for (auto d : n_docs) n += d;
    return n;
}

LevelWordCounts collapse_counts(std::span<const Document> docs, const Vocabulary& vocab) {
    LevelWordCounts out;
    out.counts = Eigen::MatrixXd::Zero(kRatingLevels, static_cast<Eigen::Index>(vocab.size()));
    out.n_docs.assign(kRatingLevels, 0);
    out.vocab_hash = vocab.hash();
    for (const auto& doc : docs) {
        if (!doc.rating || *doc.rating < 0 || *doc.rating >= kRatingLevels) {
            throw InvalidInput("document " + doc.doc_id + " has no rating in 0..5");
        }
        const int r = *doc.rating;
        ++out.n_docs[static_cast<std::size_t>(r)];
        for (const auto& token : doc.tokens) {
            if (auto j = vocab.index_of(token)) out.counts(r, static_cast<Eigen::Index>(*j)) += 1.0;
        }
    }
    return out;
}

std::size_t MnirModel::nonzero() const {
    return static_cast<std::size_t>((phi.array() != 0.0).count());
}

double MnirModel::nonzero_fraction() const {
    return phi.size() == 0 ? 0.0 : static_cast<double>(nonzero()) / static_cast<double>(phi.size());
}

namespace {

double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

// Collapsed-count Poisson working model with per-level nuisance intercepts.
// Each word's intercept is profiled out in closed form, so a word update is
// a one-dimensional convex problem in its loading.
class PathSolver {
public:
    PathSolver(const LevelWordCounts& table, const MnirOptions& options) : options_(options) {
        for (int r = 0; r < kRatingLevels; ++r) {
            if (table.counts.row(r).sum() > 0.0) {
                levels_.push_back(r);
            } else if (table.n_docs[static_cast<std::size_t>(r)] > 0) {
                dropped_.push_back(r);
            }
        }
        if (levels_.size() < 2) {
            throw InvalidInput("sentiment fit needs at least two rating levels with words, found " +
                               std::to_string(levels_.size()));
        }
        const auto L = static_cast<Eigen::Index>(levels_.size());
        V_ = table.counts.cols();
        counts_.resize(L, V_);
        r_.resize(L);
        for (Eigen::Index l = 0; l < L; ++l) {
            counts_.row(l) = table.counts.row(levels_[static_cast<std::size_t>(l)]);
            r_(l) = levels_[static_cast<std::size_t>(l)];
        }
        level_totals_ = counts_.rowwise().sum();
        word_totals_ = counts_.colwise().sum().transpose();
        weighted_ = counts_.transpose() * r_;
        total_ = level_totals_.sum();
        n_docs_ = static_cast<double>(table.total_docs());
        r_max_ = r_.maxCoeff();

        // Null model: independence of word and level.
        eta_ = level_totals_.array().log();
        alpha_.resize(V_);
        for (Eigen::Index j = 0; j < V_; ++j) {
            alpha_(j) = word_totals_(j) > 0 ? std::log(word_totals_(j) / total_)
                                             : -std::numeric_limits<double>::infinity();
        }
        phi_ = Eigen::VectorXd::Zero(V_);
        weights_ = Eigen::VectorXd::Ones(V_);
    }

    const std::vector<int>& levels() const { return levels_; }
    const std::vector<int>& dropped() const { return dropped_; }

    // Smallest penalty at which every loading is zero.
    double lambda_max() const {
        const double mean_r = level_totals_.dot(r_) / total_;
        double best = 0.0;
        for (Eigen::Index j = 0; j < V_; ++j) {
            best = std::max(best, std::abs(word_totals_(j) * mean_r - weighted_(j)) / weights_(j));
        }
        return best;
    }

    void update_weights(double concavity) {
        for (Eigen::Index j = 0; j < V_; ++j) weights_(j) = 1.0 / (1.0 + concavity * std::abs(phi_(j)));
    }

    PathSegment solve(double lambda, std::vector<double>& trace) {
        double prev = objective(lambda);
        int sweep = 0;
        std::vector<std::size_t> moving;
        // Loadings must also settle; the objective alone is dominated by the
        // intercepts on large corpora.
        const double step_tol = std::sqrt(options_.tolerance);
        for (; sweep < options_.max_sweeps; ++sweep) {
            moving.clear();
            for (Eigen::Index j = 0; j < V_; ++j) {
                const double old = phi_(j);
                update_word(j, lambda * weights_(j));
                if (std::abs(phi_(j) - old) > step_tol * (1.0 + std::abs(old))) {
                    moving.push_back(static_cast<std::size_t>(j));
                }
            }
            update_levels();
            const double current = objective(lambda);
            trace.push_back(current);
            const double change = std::abs(prev - current) / std::max(1.0, std::abs(current));
            prev = current;
            if (change < options_.tolerance && moving.empty()) {
                ++sweep;
                break;
            }
        }
        if (sweep >= options_.max_sweeps && !moving.empty()) {
            throw ConvergenceError("sentiment fit did not converge in " + std::to_string(options_.max_sweeps) +
                                       " sweeps at lambda=" + std::to_string(lambda),
                                   moving);
        }

        PathSegment seg;
        seg.lambda = lambda;
        seg.sweeps = sweep;
        seg.alpha = alpha_;
        seg.phi = phi_;
        seg.nonzero = static_cast<std::size_t>((phi_.array() != 0.0).count());
        seg.loglik = loglik();
        const double df = static_cast<double>(seg.nonzero);
        const double denom = n_docs_ - df - 1.0;
        seg.aicc = denom > 0.0 ? -2.0 * seg.loglik + 2.0 * df + 2.0 * df * (df + 1.0) / denom
                               : std::numeric_limits<double>::infinity();
        seg.word_aicc = word_aicc();
        return seg;
    }

private:
    // Minimizes -S_j phi + c_j log sum_l exp(eta_l + r_l phi) + pen |phi|, then
    // sets alpha_j to its profiled value.
    void update_word(Eigen::Index j, double pen) {
        const double c = word_totals_(j);
        if (c <= 0.0) {
            phi_(j) = 0.0;
            return;
        }
        const double s = weighted_(j);
        const double kink_tol = 1e-11 * (c * r_max_ + pen + 1.0);

        const double g0 = gradient(c, s, 0.0, nullptr);
        double phi = 0.0;
        if (g0 < -pen - kink_tol) {
            phi = root(j, c, s, +pen, +1.0);
        } else if (g0 > pen + kink_tol) {
            phi = root(j, c, s, -pen, -1.0);
        }
        phi_(j) = phi;
        alpha_(j) = std::log(c) - log_sum_exp(eta_ + r_ * phi);
    }

    // Gradient of the profiled word objective; optionally its curvature.
    double gradient(double c, double s, double phi, double* curvature) const {
        Eigen::VectorXd z = eta_ + r_ * phi;
        const double m = z.maxCoeff();
        Eigen::ArrayXd w = (z.array() - m).exp();
        const double wsum = w.sum();
        const double mean = (w * r_.array()).sum() / wsum;
        if (curvature != nullptr) {
            *curvature = c * ((w * (r_.array() - mean).square()).sum() / wsum);
        }
        return c * mean - s;
    }

    // Root of gradient + shift on the half-line given by `sign`, by Newton
    // steps safeguarded with bisection.
    double root(Eigen::Index j, double c, double s, double shift, double sign) {
        auto k = [&](double phi, double* d) { return gradient(c, s, phi, d) + shift; };
        double lo = 0.0;
        double hi = sign * std::max(1.0, sign * phi_(j));
        for (int expand = 0; sign * k(hi, nullptr) <= 0.0; ++expand) {
            lo = hi;
            hi *= 2.0;
            if (expand > 12) {
                throw ConvergenceError("loading of word " + std::to_string(j) + " diverges (separated counts)",
                                       {static_cast<std::size_t>(j)});
            }
        }
        // Keep lo on the negative side of k (in the orientation of sign).
        double x = (sign * phi_(j) > 0.0 && sign * phi_(j) < sign * hi && sign * phi_(j) > sign * lo) ? phi_(j)
                                                                                                       : 0.5 * (lo + hi);
        for (int it = 0; it < 200; ++it) {
            double d = 0.0;
            const double kx = k(x, &d);
            if (kx == 0.0) return x;
            if (sign * kx < 0.0) {
                lo = x;
            } else {
                hi = x;
            }
            double next = d > 0.0 ? x - kx / d : 0.5 * (lo + hi);
            const double a = std::min(lo, hi);
            const double b = std::max(lo, hi);
            if (!(next > a && next < b)) next = 0.5 * (lo + hi);
            if (std::abs(next - x) <= 1e-15 * (1.0 + std::abs(x))) return next;
            x = next;
        }
        return x;
    }

    void update_levels() {
        for (Eigen::Index l = 0; l < r_.size(); ++l) {
            eta_(l) = std::log(level_totals_(l)) - log_sum_exp(alpha_ + phi_ * r_(l));
        }
    }

    // Penalized negative Poisson log-likelihood (dropping log c! terms).
    double objective(double lambda) const {
        double f = 0.0;
        for (Eigen::Index j = 0; j < V_; ++j) {
            if (word_totals_(j) <= 0.0) continue;
            for (Eigen::Index l = 0; l < r_.size(); ++l) {
                const double lin = eta_(l) + alpha_(j) + phi_(j) * r_(l);
                f += std::exp(lin) - counts_(l, j) * lin;
            }
            f += lambda * weights_(j) * std::abs(phi_(j));
        }
        return f;
    }

    // Each word's Poisson factor given eta, with df = intercept + loading.
    Eigen::VectorXd word_aicc() const {
        Eigen::VectorXd out(V_);
        for (Eigen::Index j = 0; j < V_; ++j) {
            if (word_totals_(j) <= 0.0) {
                out(j) = 0.0;
                continue;
            }
            double ll = 0.0;
            for (Eigen::Index l = 0; l < r_.size(); ++l) {
                const double lin = eta_(l) + alpha_(j) + phi_(j) * r_(l);
                ll += counts_(l, j) * lin - std::exp(lin);
            }
            const double df = phi_(j) != 0.0 ? 2.0 : 1.0;
            const double denom = n_docs_ - df - 1.0;
            out(j) = denom > 0.0 ? -2.0 * ll + 2.0 * df * n_docs_ / denom : std::numeric_limits<double>::infinity();
        }
        return out;
    }

    double loglik() const {
        double ll = 0.0;
        for (Eigen::Index l = 0; l < r_.size(); ++l) {
            Eigen::VectorXd z = alpha_ + phi_ * r_(l);
            const double lse = log_sum_exp(z);
            for (Eigen::Index j = 0; j < V_; ++j) {
                if (counts_(l, j) > 0.0) ll += counts_(l, j) * (z(j) - lse);
            }
        }
        return ll;
    }

    MnirOptions options_;
    std::vector<int> levels_;
    std::vector<int> dropped_;
    Eigen::Index V_ = 0;
    Eigen::MatrixXd counts_;
    Eigen::VectorXd r_;
    Eigen::VectorXd level_totals_;
    Eigen::VectorXd word_totals_;
    Eigen::VectorXd weighted_;
    double total_ = 0.0;
    double n_docs_ = 0.0;
    double r_max_ = 0.0;
    Eigen::VectorXd eta_;
    Eigen::VectorXd alpha_;
    Eigen::VectorXd phi_;
    Eigen::VectorXd weights_;
};

void check_options(const MnirOptions& options) {
    if (options.n_segments < 1) throw InvalidInput("n_segments must be positive");
    if (options.concavity < 0.0) throw InvalidInput("concavity must be nonnegative");
    if (!(options.lambda_min_ratio > 0.0 && options.lambda_min_ratio < 1.0)) {
        throw InvalidInput("lambda_min_ratio must lie in (0, 1)");
    }
}

MnirModel assemble(const PathSolver& solver, const LevelWordCounts& counts, std::vector<PathSegment> segments,
                   std::vector<double> trace, SegmentSelection selection) {
    MnirModel model;
    model.vocab_hash = counts.vocab_hash;
    model.levels = solver.levels();
    model.dropped_levels = solver.dropped();
    model.objective_trace = std::move(trace);
    std::size_t best = 0;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        model.lambda_path.push_back(segments[k].lambda);
        if (segments[k].aicc < segments[best].aicc) best = k;
    }
    model.selection = selection;
    model.selected_segment = best;
    model.alpha = segments[best].alpha;
    model.phi = segments[best].phi;
    model.word_segment.assign(static_cast<std::size_t>(model.phi.size()), best);
    if (selection == SegmentSelection::per_word) {
        for (Eigen::Index j = 0; j < model.phi.size(); ++j) {
            std::size_t pick = 0;
            for (std::size_t k = 1; k < segments.size(); ++k) {
                if (segments[k].word_aicc(j) < segments[pick].word_aicc(j)) pick = k;
            }
            model.word_segment[static_cast<std::size_t>(j)] = pick;
            model.alpha(j) = segments[pick].alpha(j);
            model.phi(j) = segments[pick].phi(j);
        }
    }
    model.segments = std::move(segments);
    return model;
}

}  // namespace

MnirModel fit_mnir(const LevelWordCounts& counts, const MnirOptions& options) {
    check_options(options);
    PathSolver solver(counts, options);
    const double lmax = solver.lambda_max();
    std::vector<PathSegment> segments;
    std::vector<double> trace;
    for (int k = 0; k < options.n_segments; ++k) {
        const double frac = options.n_segments == 1 ? 0.0 : static_cast<double>(k) / (options.n_segments - 1);
        const double lambda = lmax * std::pow(options.lambda_min_ratio, frac);
        if (k > 0 && options.concavity > 0.0) solver.update_weights(options.concavity);
        segments.push_back(solver.solve(lambda, trace));
    }
    return assemble(solver, counts, std::move(segments), std::move(trace), options.selection);
}

MnirModel fit_mnir_at(const LevelWordCounts& counts, double lambda, const MnirOptions& options) {
    check_options(options);
    if (lambda < 0.0) throw InvalidInput("lambda must be nonnegative");
    PathSolver solver(counts, options);
    std::vector<double> trace;
    std::vector<PathSegment> segments{solver.solve(lambda, trace)};
    return assemble(solver, counts, std::move(segments), std::move(trace), options.selection);
}

double score_row(const SparseRow& row, const MnirModel& model) {
    double s = 0.0;
    const auto V = static_cast<std::uint32_t>(model.phi.size());
    for (std::size_t k = 0; k < row.cols.size(); ++k) {
        if (row.cols[k] >= V) throw InvalidInput("frequency row column outside the model vocabulary");
        s += row.vals[k] * model.phi(row.cols[k]);
    }
    return s;
}

std::vector<SentimentScore> score(const FrequencyMatrix& matrix, const MnirModel& model) {
    if (matrix.vocab_hash != model.vocab_hash || matrix.n_cols != model.vocab_size()) {
        throw InvalidInput("frequency matrix and sentiment model use different vocabularies");
    }
    std::vector<SentimentScore> out;
    out.reserve(matrix.n_rows());
    for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
        SentimentScore s;
        s.doc_id = matrix.row_ids[i];
        s.raw_score = score_row(matrix.rows[i], model);
        s.informative = s.raw_score != 0.0;
        out.push_back(std::move(s));
    }
    return out;
}

ProjectionSummary project_onto_forum(std::span<const Document> posts, const Vocabulary& vocab,
                                     const MnirModel& model) {
    ProjectionSummary summary;
    summary.scores = score(frequency_matrix(posts, vocab), model);
    for (const auto& s : summary.scores) summary.n_uninformative += s.informative ? 0 : 1;
    summary.fraction_uninformative =
        summary.scores.empty() ? 0.0
                               : static_cast<double>(summary.n_uninformative) / static_cast<double>(summary.scores.size());
    return summary;
}

Standardizer standardize_scores(std::vector<SentimentScore>& scores) {
    std::set<double> distinct;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : scores) {
        if (s.raw_score == 0.0) continue;
        distinct.insert(s.raw_score);
        sum += s.raw_score;
        ++n;
    }
    if (distinct.size() < 2) {
        throw InvalidInput("standardization needs at least two distinct nonzero scores, found " +
                           std::to_string(distinct.size()));
    }
    Standardizer st;
    st.n_informative = n;
    st.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& s : scores) {
        if (s.raw_score != 0.0) ss += (s.raw_score - st.mean) * (s.raw_score - st.mean);
    }
    st.sd = std::sqrt(ss / static_cast<double>(n - 1));
    apply_standardizer(scores, st);
    return st;
}

void apply_standardizer(std::vector<SentimentScore>& scores, const Standardizer& standardizer) {
    for (auto& s : scores) {
        s.informative = s.raw_score != 0.0;
        s.standardized = standardizer.apply(s.raw_score);
    }
}

// Serialization ----------------------------------------------------------

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isfinite(v(i))) {
            a.push_back(v(i));
        } else {
            a.push_back(nullptr);
        }
    }
    return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) =
            a[i].is_null() ? -std::numeric_limits<double>::infinity() : a[i].get<double>();
    }
    return v;
}

json sparse_to_json(const Eigen::VectorXd& v) {
    json idx = json::array();
    json val = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) != 0.0) {
            idx.push_back(i);
            val.push_back(v(i));
        }
    }
    return {{"size", v.size()}, {"index", idx}, {"value", val}};
}

Eigen::VectorXd sparse_from_json(const json& j) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(j.at("size").get<Eigen::Index>());
    const auto& idx = j.at("index");
    const auto& val = j.at("value");
    if (idx.size() != val.size()) throw InvalidInput("sparse vector: index/value length mismatch");
    for (std::size_t k = 0; k < idx.size(); ++k) v(idx[k].get<Eigen::Index>()) = val[k].get<double>();
    return v;
}

constexpr const char* kModelFormat = "textdemand.mnir";
constexpr int kModelVersion = 1;

}  // namespace

std::string MnirModel::to_json() const {
    json j;
    j["format"] = kModelFormat;
    j["version"] = kModelVersion;
    j["vocab_hash"] = vocab_hash;
    j["levels"] = levels;
    j["dropped_levels"] = dropped_levels;
    j["lambda_path"] = lambda_path;
    j["selection"] = selection == SegmentSelection::per_word ? "per_word" : "global";
    j["selected_segment"] = selected_segment;
    j["word_segment"] = word_segment;
    j["alpha"] = vec_to_json(alpha);
    j["phi"] = sparse_to_json(phi);
    json segs = json::array();
    for (const auto& s : segments) {
        segs.push_back({{"lambda", s.lambda},
                        {"nonzero", s.nonzero},
                        {"loglik", s.loglik},
                        {"aicc", std::isfinite(s.aicc) ? json(s.aicc) : json(nullptr)},
                        {"sweeps", s.sweeps},
                        {"phi", sparse_to_json(s.phi)}});
    }
    j["segments"] = segs;
    return j.dump(1);
}

MnirModel MnirModel::from_json(std::string_view text) {
    const json j = json::parse(text);
    if (j.value("format", "") != kModelFormat) throw InvalidInput("not a sentiment model artifact");
    if (j.at("version").get<int>() != kModelVersion) throw InvalidInput("unsupported sentiment model version");
    MnirModel m;
    m.vocab_hash = j.at("vocab_hash").get<std::string>();
    m.levels = j.at("levels").get<std::vector<int>>();
    m.dropped_levels = j.at("dropped_levels").get<std::vector<int>>();
    m.lambda_path = j.at("lambda_path").get<std::vector<double>>();
    m.selection = j.at("selection").get<std::string>() == "global" ? SegmentSelection::global
                                                                   : SegmentSelection::per_word;
    m.selected_segment = j.at("selected_segment").get<std::size_t>();
    m.word_segment = j.at("word_segment").get<std::vector<std::size_t>>();
    m.alpha = vec_from_json(j.at("alpha"));
    m.phi = sparse_from_json(j.at("phi"));
    for (const auto& s : j.at("segments")) {
        PathSegment seg;
        seg.lambda = s.at("lambda").get<double>();
        seg.nonzero = s.at("nonzero").get<std::size_t>();
        seg.loglik = s.at("loglik").get<double>();
        seg.aicc = s.at("aicc").is_null() ? std::numeric_limits<double>::infinity() : s.at("aicc").get<double>();
        seg.sweeps = s.at("sweeps").get<int>();
        seg.phi = sparse_from_json(s.at("phi"));
        m.segments.push_back(std::move(seg));
    }
    if (m.alpha.size() != m.phi.size()) throw InvalidInput("sentiment model: alpha/phi length mismatch");
    return m;
}

}  // namespace textdemand
