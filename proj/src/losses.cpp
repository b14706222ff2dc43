#include "fedstain/losses.hpp"

#include <cmath>

#include "fedstain/error.hpp"

namespace fedstain {

std::string_view to_string(ClsLoss c) {
  return c == ClsLoss::SupConSelf ? "supcon_self" : "cross_entropy";
}

ClsLoss parse_cls_loss(std::string_view s) {
  if (s == "cross_entropy") return ClsLoss::CrossEntropy;
  if (s == "supcon_self") return ClsLoss::SupConSelf;
  throw InvalidArgument("unknown cls_loss '" + std::string(s) + "'");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("loss weights must be >= 0");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad_logits) {
  const auto n = logits.cols();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0)
    throw ShapeMismatch("cross_entropy: label count does not match batch");
  const Matrix probs = softmax_columns(logits);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= logits.rows()) throw InvalidArgument("label out of range");
    // log-softmax evaluated stably
    const double mx = logits.col(j).maxCoeff();
    const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
    loss += lse - logits(y, j);
  }
  loss /= static_cast<double>(n);
  if (grad_logits) {
    *grad_logits = probs;
    for (Eigen::Index j = 0; j < n; ++j) (*grad_logits)(labels[static_cast<std::size_t>(j)], j) -= 1.0;
    *grad_logits /= static_cast<double>(n);
  }
  return loss;
}

double supcon(const Matrix& anchors, const Matrix& bank, std::span<const int> labels, double tau,
              Matrix* grad_anchors, Matrix* grad_bank) {
  const auto n = anchors.cols();
  if (bank.cols() != n || bank.rows() != anchors.rows() ||
      static_cast<std::size_t>(n) != labels.size())
    throw ShapeMismatch("supcon: anchors, bank and labels must share batch size");
  if (n < 2) throw InvalidArgument("supcon needs at least two samples");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");

  const Eigen::VectorXd an = anchors.colwise().norm().transpose();
  const Eigen::VectorXd bn = bank.colwise().norm().transpose();
  Matrix ua = anchors, ub = bank;
  for (Eigen::Index j = 0; j < n; ++j) {
    ua.col(j) /= std::max(an(j), 1e-12);
    ub.col(j) /= std::max(bn(j), 1e-12);
  }
  const Matrix sim = ua.transpose() * ub;  // (anchor, bank)

  // dL/dsim, accumulated per anchor, then mapped back through normalization.
  Matrix dsim = Matrix::Zero(n, n);
  double loss = 0.0;
  std::size_t contributing = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t positives = 0;
    for (Eigen::Index a = 0; a < n; ++a)
      if (a != i && labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)]) ++positives;
    if (positives == 0) continue;
    ++contributing;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < n; ++a)
      if (a != i) mx = std::max(mx, sim(i, a) / tau);
    double denom = 0.0;
    for (Eigen::Index a = 0; a < n; ++a)
      if (a != i) denom += std::exp(sim(i, a) / tau - mx);
    const double log_denom = mx + std::log(denom);
    double li = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      if (p != i && labels[static_cast<std::size_t>(p)] == labels[static_cast<std::size_t>(i)])
        li -= sim(i, p) / tau - log_denom;
    li /= static_cast<double>(positives);
    loss += li;
    if (grad_anchors || grad_bank) {
      for (Eigen::Index a = 0; a < n; ++a) {
        if (a == i) continue;
        const double softmax = std::exp(sim(i, a) / tau - log_denom);
        const bool pos = labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)];
        dsim(i, a) += (softmax - (pos ? 1.0 / static_cast<double>(positives) : 0.0)) / tau;
      }
    }
  }
  if (contributing == 0) throw NoPositives("supcon: no anchor has a same-label partner");
  const double scale = 1.0 / static_cast<double>(contributing);
  loss *= scale;

  if (grad_anchors || grad_bank) {
    dsim *= scale;
    // sim = ua^T ub; d/d ua = ub dsim^T, d/d ub = ua dsim.
    const Matrix dua = ub * dsim.transpose();
    const Matrix dub = ua * dsim;
    auto through_norm = [n](const Matrix& u, const Matrix& du, const Eigen::VectorXd& norms) {
      Matrix out(u.rows(), n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const double proj = u.col(j).dot(du.col(j));
        out.col(j) = (du.col(j) - proj * u.col(j)) / std::max(norms(j), 1e-12);
      }
      return out;
    };
    if (grad_anchors) *grad_anchors = through_norm(ua, dua, an);
    if (grad_bank) *grad_bank = through_norm(ub, dub, bn);
  }
  return loss;
}

double representation_alignment(const Matrix& z, const Matrix& z_stain, const Matrix& z1,
                                 const Matrix& z2, std::span<const int> labels, double tau,
                                 Matrix* grad_z, Matrix* grad_stain, Matrix* grad_z1,
                                 Matrix* grad_z2) {
  const bool want = grad_z || grad_stain || grad_z1 || grad_z2;
  const Matrix* views[3] = {&z_stain, &z1, &z2};
  Matrix* view_grads[3] = {grad_stain, grad_z1, grad_z2};
  double total = 0.0;
  Matrix acc = Matrix::Zero(z.rows(), z.cols());
  for (int v = 0; v < 3; ++v) {
    Matrix ga, gb;
    total += supcon(z, *views[v], labels, tau, want ? &ga : nullptr, want ? &gb : nullptr);
    if (want) {
      acc += ga / 3.0;
      if (view_grads[v]) *view_grads[v] = gb / 3.0;
    }
  }
  if (grad_z) *grad_z = acc;
  return total / 3.0;
}

double js_alignment_probs(std::span<const Matrix> probs) {
  const std::size_t m = probs.size();
  if (m < 2) throw InvalidArgument("js_alignment needs at least two prediction sets");
  const auto k = probs[0].rows(), n = probs[0].cols();
  for (const auto& p : probs)
    if (p.rows() != k || p.cols() != n) throw ShapeMismatch("js_alignment: prediction shapes differ");
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index c = 0; c < k; ++c) {
      double mean = 0.0;
      for (const auto& p : probs) mean += p(c, j);
      mean /= static_cast<double>(m);
      for (const auto& p : probs) {
        const double v = p(c, j);
        if (v > 0.0) loss += v * (std::log(v) - std::log(mean));
      }
    }
  }
  return loss / (static_cast<double>(m) * static_cast<double>(n));
}

double js_alignment(std::span<const Matrix> logits, std::vector<Matrix>* grad_logits) {
  std::vector<Matrix> probs;
  probs.reserve(logits.size());
  for (const auto& l : logits) probs.push_back(softmax_columns(l));
  const double loss = js_alignment_probs(probs);
  if (grad_logits) {
    const std::size_t m = probs.size();
    const auto k = probs[0].rows(), n = probs[0].cols();
    Matrix log_mean(k, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index c = 0; c < k; ++c) {
        double mean = 0.0;
        for (const auto& p : probs) mean += p(c, j);
        log_mean(c, j) = std::log(mean / static_cast<double>(m));
      }
    const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(n));
    grad_logits->clear();
    for (const auto& p : probs) {
      // dL/dp = scale * (log p - log mean); chain through softmax.
      const Matrix dp = scale * (p.array().log() - log_mean.array()).matrix();
      Matrix dl(k, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const double dot = p.col(j).dot(dp.col(j));
        dl.col(j) = p.col(j).cwiseProduct((dp.col(j).array() - dot).matrix());
      }
      grad_logits->push_back(std::move(dl));
    }
  }
  return loss;
}

LossBreakdown total_loss(double cls, double ra, double js, const LossWeights& w) {
  return LossBreakdown{cls, ra, js, cls + w.alpha * ra + w.beta * js};
}

}  // namespace fedstain
