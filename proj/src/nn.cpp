#include "gerea/nn.hpp"

#include "gerea/util.hpp"

#include <cmath>

namespace gerea::nn {

namespace {
using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
}

Var Tape::record(Mat val, std::function<void(Node&)> back) {
  Var out = std::make_shared<Node>(std::move(val), true);
  ops_.push_back([out, back = std::move(back)]() { back(*out); });
  return out;
}

Var Tape::matmul(Var a, Var b) {
  return record(a->val * b->val, [a, b](Node& out) {
    a->grad.noalias() += out.grad * b->val.transpose();
    b->grad.noalias() += a->val.transpose() * out.grad;
  });
}

Var Tape::add(Var a, Var b) {
  return record(a->val + b->val, [a, b](Node& out) {
    a->grad += out.grad;
    b->grad += out.grad;
  });
}

Var Tape::add_rowvec(Var a, Var bias) {
  Mat v = a->val;
  v.rowwise() += bias->val.row(0);
  return record(std::move(v), [a, bias](Node& out) {
    a->grad += out.grad;
    bias->grad.row(0) += out.grad.colwise().sum();
  });
}

Var Tape::add_const(Var a, const Mat& c) {
  return record(a->val + c, [a](Node& out) { a->grad += out.grad; });
}

Var Tape::scale(Var a, double c) {
  return record(a->val * c, [a, c](Node& out) { a->grad += out.grad * c; });
}

Var Tape::relu(Var a) {
  Mat v = a->val.cwiseMax(0.0);
  return record(std::move(v), [a](Node& out) {
    a->grad.array() += out.grad.array() * (a->val.array() > 0.0).cast<double>();
  });
}

Var Tape::transpose(Var a) {
  return record(a->val.transpose(),
                [a](Node& out) { a->grad += out.grad.transpose(); });
}

Var Tape::softmax_rows(Var a) {
  Mat y(a->val.rows(), a->val.cols());
  for (int r = 0; r < a->val.rows(); ++r) {
    double mx = a->val.row(r).maxCoeff();
    RowArray e = (a->val.row(r).array() - mx).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return record(std::move(y), [a](Node& out) {
    for (int r = 0; r < out.val.rows(); ++r) {
      double dot = out.grad.row(r).dot(out.val.row(r));
      a->grad.row(r).array() +=
          out.val.row(r).array() * (out.grad.row(r).array() - dot);
    }
  });
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const int rows = static_cast<int>(x->val.rows());
  const int cols = static_cast<int>(x->val.cols());
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    double mu = x->val.row(r).mean();
    RowArray centered = x->val.row(r).array() - mu;
    double var = centered.square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (centered * is).matrix();
  }
  Mat y = xhat;
  for (int r = 0; r < rows; ++r) {
    y.row(r) = xhat.row(r).cwiseProduct(gain->val.row(0)) + bias->val.row(0);
  }
  return record(std::move(y), [x, gain, bias, xhat, inv_std](Node& out) {
    const int rows = static_cast<int>(out.val.rows());
    const int cols = static_cast<int>(out.val.cols());
    for (int r = 0; r < rows; ++r) {
      RowArray dy = out.grad.row(r).array();
      gain->grad.row(0).array() += dy * xhat.row(r).array();
      bias->grad.row(0).array() += dy;
      RowArray dxhat = dy * gain->val.row(0).array();
      double mean_dxhat = dxhat.mean();
      double mean_dxhat_xhat = (dxhat * xhat.row(r).array()).mean();
      x->grad.row(r).array() +=
          inv_std(r) *
          (dxhat - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat);
    }
    (void)cols;
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw UserError("concat_rows: empty input");
  int rows = 0;
  const int cols = static_cast<int>(parts[0]->val.cols());
  for (auto& p : parts) rows += static_cast<int>(p->val.rows());
  Mat v(rows, cols);
  int at = 0;
  for (auto& p : parts) {
    v.middleRows(at, p->val.rows()) = p->val;
    at += static_cast<int>(p->val.rows());
  }
  return record(std::move(v), [parts](Node& out) {
    int at = 0;
    for (auto& p : parts) {
      p->grad += out.grad.middleRows(at, p->val.rows());
      at += static_cast<int>(p->val.rows());
    }
  });
}

Var Tape::slice_rows(Var a, int begin, int count) {
  return record(a->val.middleRows(begin, count), [a, begin, count](Node& out) {
    a->grad.middleRows(begin, count) += out.grad;
  });
}

Var Tape::gather_rows(Var table, std::vector<int> idx) {
  Mat v(idx.size(), table->val.cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(i) = table->val.row(idx[i]);
  return record(std::move(v), [table, idx = std::move(idx)](Node& out) {
    for (size_t i = 0; i < idx.size(); ++i) {
      table->grad.row(idx[i]) += out.grad.row(i);
    }
  });
}

Var Tape::sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = a->val.sum();
  return record(std::move(v), [a](Node& out) {
    a->grad.array() += out.grad(0, 0);
  });
}

Var Tape::cross_entropy_rows(Var logits, std::vector<int> targets) {
  const int rows = static_cast<int>(logits->val.rows());
  if (static_cast<int>(targets.size()) != rows) {
    throw UserError("cross_entropy_rows: target length mismatch");
  }
  Mat probs(rows, logits->val.cols());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    double mx = logits->val.row(r).maxCoeff();
    RowArray e = (logits->val.row(r).array() - mx).exp();
    double z = e.sum();
    probs.row(r) = (e / z).matrix();
    loss -= std::log(std::max(probs(r, targets[r]), 1e-300));
  }
  Mat v(1, 1);
  v(0, 0) = loss / rows;
  return record(std::move(v),
                [logits, probs, targets = std::move(targets), rows](Node& out) {
                  double g = out.grad(0, 0) / rows;
                  Mat d = probs;
                  for (int r = 0; r < rows; ++r) d(r, targets[r]) -= 1.0;
                  logits->grad += d * g;
                });
}

void Tape::backward(Var out) {
  if (out->val.rows() != 1 || out->val.cols() != 1) {
    throw UserError("backward: output must be scalar");
  }
  out->grad(0, 0) = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---- optimizer -------------------------------------------------------------

double AdamW::current_lr() const {
  int t = step_count_ + 1;
  if (warmup_steps > 0 && t < warmup_steps) {
    return lr * static_cast<double>(t) / warmup_steps;
  }
  return lr;
}

void AdamW::step() {
  if (m_.empty()) {
    for (auto& p : params_) {
      m_.emplace_back(Mat::Zero(p->val.rows(), p->val.cols()));
      v_.emplace_back(Mat::Zero(p->val.rows(), p->val.cols()));
    }
  }
  double lr_t = current_lr();
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1, step_count_);
  double bc2 = 1.0 - std::pow(beta2, step_count_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * p.grad;
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    // decoupled weight decay
    if (weight_decay > 0.0) p.val -= lr_t * weight_decay * p.val;
    p.val.array() -= lr_t * mhat.array() / (vhat.array().sqrt() + eps);
    p.grad.setZero();
  }
}

void AdamW::zero_grads() {
  for (auto& p : params_) p->grad.setZero();
}

}  // namespace gerea::nn
