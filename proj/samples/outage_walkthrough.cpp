// Generates a small single-outage dataset for case14, trains a one-hidden-layer
// network, places three PMUs greedily and reports the test error of both.
#include <iostream>

#include "gridsense/gridsense.hpp"

int main() {
  using namespace gridsense;
  const auto grid = load_builtin_case("case14");

  GenerationConfig gen;
  gen.n_train = 6;
  gen.n_val = 3;
  gen.n_test = 10;
  const auto ds = generate_dataset(grid, OutageOrder::single, gen);
  std::cout << ds.class_count() << " classes, " << ds.train.size() << " training samples\n";

  TrainConfig train;
  train.hidden = {30};
  train.lbfgs.max_iter = 300;
  const auto all = finalize_model(ds, {}, train, 7);
  const auto full = evaluate(all.model, ds.test);
  std::cout << "all buses: top-1 " << full.top1_error() << ", top-2 " << full.top2_error() << '\n';

  SelectionConfig sel;
  sel.train = train;
  sel.sparsa.max_iter = 300;
  const auto tuned = tune_tau(ds, SelectionMethod::greedy, 3, sel, {0.5, 2.0}, 1, 7);
  const auto few = evaluate(tuned.retrained.model, ds.test);
  std::cout << "buses";
  for (int b : tuned.best.selected_buses) std::cout << ' ' << b;
  std::cout << ": top-1 " << few.top1_error() << ", top-2 " << few.top2_error() << '\n';
}
