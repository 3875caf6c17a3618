#include "histex/loss.hpp"

#include "histex/error.hpp"

#include <cmath>
#include <stdexcept>

namespace histex {
namespace {

struct TermWeights {
  double image;  // CE(logits^T, targets^T)
  double spot;   // CE(logits, targets)
};

TermWeights term_weights(const LossConfig& c) {
  if (c.mode == LossMode::ImageCentric) return {1.0, c.spot_loss_weight};
  return {0.5, 0.5};
}

/// Adds w * mean_i CE(a_i, b_i) gradients with respect to a and b.
double ce_term(const Matrix& a, const Matrix& b, double w, Matrix* da, Matrix* db) {
  const Index n = a.rows();
  const Matrix logp = log_softmax_rows(a);
  const double value = w * (-(b.array() * logp.array()).sum()) / static_cast<double>(n);
  if (da) {
    const Vector row_mass = b.rowwise().sum();
    Matrix p = logp.array().exp();
    p.array().colwise() *= row_mass.array();
    *da += (w / static_cast<double>(n)) * (p - b);
  }
  if (db) *db += (-w / static_cast<double>(n)) * logp;
  return value;
}

void check_embeddings(const Matrix& p, const Matrix& s) {
  require(p.rows() >= 1, ErrorKind::ShapeMismatch, "contrastive loss needs at least one row");
  require(p.rows() == s.rows() && p.cols() == s.cols(), ErrorKind::ShapeMismatch,
          "image embeddings " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) + " vs spot embeddings " +
              std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
  require(p.allFinite() && s.allFinite(), ErrorKind::NonFiniteInput, "embeddings contain non-finite values");
}

}  // namespace

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::ImageCentric: return "image_centric";
    case LossMode::ClipSoft: return "clip_soft";
    case LossMode::ClipHard: return "clip_hard";
  }
  return "image_centric";
}

LossMode parse_loss_mode(const std::string& text) {
  if (text == "image_centric") return LossMode::ImageCentric;
  if (text == "clip_soft") return LossMode::ClipSoft;
  if (text == "clip_hard") return LossMode::ClipHard;
  fail(ErrorKind::ParseError, "unknown loss '" + text + "' (expected image_centric, clip_soft or clip_hard)");
}

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("temperature must be positive");
  if (!(spot_loss_weight >= 0.0)) throw std::invalid_argument("spot loss weight must be non-negative");
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Vector cross_entropy(const Matrix& logits, const Matrix& targets) {
  require(logits.rows() == targets.rows() && logits.cols() == targets.cols(), ErrorKind::ShapeMismatch,
          "logits and targets differ in shape");
  require(logits.allFinite() && targets.allFinite(), ErrorKind::NonFiniteInput, "cross entropy input is not finite");
  const Matrix logp = log_softmax_rows(logits);
  return -(targets.array() * logp.array()).rowwise().sum();
}

LossEvaluation evaluate_contrastive(const Matrix& p, const Matrix& s, const LossConfig& config, bool with_gradients) {
  config.validate();
  check_embeddings(p, s);
  const Index n = p.rows();
  const double tau = config.temperature;

  LossEvaluation out;
  out.logits = (s * p.transpose()) / tau;
  switch (config.mode) {
    case LossMode::ImageCentric: out.targets = softmax_rows((p * p.transpose()) / tau); break;
    case LossMode::ClipSoft: out.targets = softmax_rows(((p * p.transpose() + s * s.transpose()) * 0.5) / tau); break;
    case LossMode::ClipHard: out.targets = Matrix::Identity(n, n); break;
  }

  const auto w = term_weights(config);
  Matrix dlogits_t, dtargets_t, dlogits, dtargets;
  if (with_gradients) {
    dlogits_t = Matrix::Zero(n, n);
    dtargets_t = Matrix::Zero(n, n);
    dlogits = Matrix::Zero(n, n);
    dtargets = Matrix::Zero(n, n);
  }
  const Matrix logits_t = out.logits.transpose();
  const Matrix targets_t = out.targets.transpose();
  double value = 0.0;
  if (w.image != 0.0)
    value += ce_term(logits_t, targets_t, w.image, with_gradients ? &dlogits_t : nullptr,
                     with_gradients ? &dtargets_t : nullptr);
  if (w.spot != 0.0)
    value += ce_term(out.logits, out.targets, w.spot, with_gradients ? &dlogits : nullptr,
                     with_gradients ? &dtargets : nullptr);
  out.value = value;
  if (!with_gradients) return out;

  dlogits += dlogits_t.transpose();
  dtargets += dtargets_t.transpose();

  out.grad_spot = (dlogits * p) / tau;
  out.grad_image = (dlogits.transpose() * s) / tau;

  if (config.mode != LossMode::ClipHard) {
    // Backpropagate through the row softmax that produced the soft targets.
    Matrix dz(n, n);
    for (Index r = 0; r < n; ++r) {
      const double inner = dtargets.row(r).dot(out.targets.row(r));
      dz.row(r) = out.targets.row(r).array() * (dtargets.row(r).array() - inner);
    }
    const Matrix dsim = (dz + dz.transpose()) / tau;
    if (config.mode == LossMode::ImageCentric) {
      out.grad_image += dsim * p;
    } else {
      out.grad_image += 0.5 * (dsim * p);
      out.grad_spot += 0.5 * (dsim * s);
    }
  }
  return out;
}

double image_centric_loss(const Matrix& p, const Matrix& s, const LossConfig& config) {
  LossConfig c = config;
  c.mode = LossMode::ImageCentric;
  return evaluate_contrastive(p, s, c, false).value;
}

double clip_baseline_loss(const Matrix& p, const Matrix& s, const LossConfig& config) {
  LossConfig c = config;
  if (c.mode == LossMode::ImageCentric) c.mode = LossMode::ClipSoft;
  return evaluate_contrastive(p, s, c, false).value;
}

double contrastive_loss(const Matrix& p, const Matrix& s, const LossConfig& config) {
  return evaluate_contrastive(p, s, config, false).value;
}

}  // namespace histex
