#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace gerea::nn {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat val;
  Mat grad;
  bool requires_grad = true;

  Node(Mat v, bool rg)
      : val(std::move(v)), grad(Mat::Zero(val.rows(), val.cols())), requires_grad(rg) {}
};

using Var = std::shared_ptr<Node>;

inline Var make_param(Mat v) { return std::make_shared<Node>(std::move(v), true); }
inline Var make_const(Mat v) { return std::make_shared<Node>(std::move(v), false); }

// Reverse-mode tape over dense double matrices. Parameters are shared Nodes
// that outlive the tape; grads accumulate into node.grad until zeroed by the
// optimizer.
class Tape {
 public:
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);              // same shape
  Var add_rowvec(Var a, Var bias);    // bias: 1 x C, broadcast over rows
  Var add_const(Var a, const Mat& c); // e.g. attention masks
  Var scale(Var a, double c);
  Var relu(Var a);
  Var transpose(Var a);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, int begin, int count);
  Var gather_rows(Var table, std::vector<int> idx);
  Var sum(Var a);  // 1x1
  // mean over rows of -log softmax(logits)(row, target[row]); 1x1
  Var cross_entropy_rows(Var logits, std::vector<int> targets);

  void backward(Var out);  // out must be 1x1; seeds grad with 1

 private:
  Var record(Mat val, std::function<void(Node&)> back);
  std::vector<std::function<void()>> ops_;
};

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup_steps = 0;

  explicit AdamW(std::vector<Var> params) : params_(std::move(params)) {}

  double current_lr() const;
  void step();        // applies update from accumulated grads, then zeroes them
  void zero_grads();
  int steps_taken() const { return step_count_; }

 private:
  std::vector<Var> params_;
  std::vector<Mat> m_, v_;
  int step_count_ = 0;
};

}  // namespace gerea::nn
