#include <omp.h>

#include <numeric>

#include "aidflow/classifier.hpp"
#include "aidflow/ensemble.hpp"
#include "aidflow/weaklabel.hpp"
#include "doctest.h"
#include "toy.hpp"

using namespace aidflow;

namespace {

struct Threads {
  int saved = omp_get_max_threads();
  explicit Threads(int n) { omp_set_num_threads(n); }
  ~Threads() { omp_set_num_threads(saved); }
};

classifier::ModelConfig config() {
  classifier::ModelConfig c;
  c.units = 6;
  c.bidirectional = true;
  c.seq_len = 10;
  return c;
}

}  // namespace

TEST_CASE("label matrix matches the serial version") {
  const auto s = toy::slices(333, 20, 1);
  for (int t : {1, 3, 4}) {
    Threads guard(t);
    CHECK(weaklabel::apply_lfs(s).votes == weaklabel::reference::apply_lfs(s).votes);
  }
}

TEST_CASE("batch gradient matches the serial version bit for bit") {
  const auto s = toy::slices(70, 10, 2);
  const auto targets = classifier::weak_targets(s);
  const classifier::LabeledView data{s, targets};
  const auto model = classifier::init_model(config(), 5);
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> ref_grad;
  const double ref = classifier::reference::batch_loss_and_gradient(config(), model.params, data, idx, 2.0, ref_grad);
  for (int t : {1, 2, 4}) {
    Threads guard(t);
    std::vector<double> grad;
    CHECK(classifier::batch_loss_and_gradient(config(), model.params, data, idx, 2.0, grad) == ref);
    CHECK(grad == ref_grad);
  }
}

TEST_CASE("inference and k-NN match the serial versions") {
  const auto tr = toy::slices(120, 10, 3), q = toy::slices(57, 10, 4);
  const auto labels = classifier::weak_targets(tr);
  auto model = classifier::init_model(config(), 6);
  for (int t : {1, 3}) {
    Threads guard(t);
    CHECK(classifier::forward_batch(model, q) == classifier::reference::forward_batch(model, q));
    CHECK(classifier::knn_predict(tr, labels, q, 5) == classifier::reference::knn_predict(tr, labels, q, 5));
  }
}

TEST_CASE("ensemble prediction matches the serial version") {
  ensemble::Ensemble e;
  for (std::uint64_t s = 0; s < 5; ++s) e.members.push_back(classifier::init_model(config(), s));
  const auto q = toy::slices(40, 10, 7);
  for (int t : {1, 4}) {
    Threads guard(t);
    const auto a = ensemble::predict_batch(e, q), b = ensemble::reference::predict_batch(e, q);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].member_outputs == b[i].member_outputs);
      CHECK(a[i].quantile_75 == b[i].quantile_75);
      CHECK(a[i].variance == b[i].variance);
    }
  }
}

TEST_CASE("training does not depend on the thread count") {
  const auto tr = toy::slices(50, 10, 8), va = toy::slices(20, 10, 9);
  const auto tt = classifier::weak_targets(tr), vt = classifier::weak_targets(va);
  classifier::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 20;
  std::vector<double> first;
  for (int t : {1, 4}) {
    Threads guard(t);
    const auto m = classifier::train(config(), tc, {tr, tt}, {va, vt});
    if (first.empty())
      first = m.params;
    else
      CHECK(m.params == first);
  }
}
