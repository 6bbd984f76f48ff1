// Trains a tiny model on 10-city instances for a few epochs, then compares
// its deterministic tours with nearest neighbour and the exact optimum.

#include <cstdio>

#include "permtour/permtour.hpp"

using namespace permtour;

int main() {
  ModelConfig mc;
  mc.n = 10;
  mc.layers = 2;
  mc.hidden = 32;

  TrainConfig tc;
  tc.epochs_max = 8;
  tc.warmup_epochs = 1;
  tc.batch_size = 32;
  tc.dataset_size = 1024;
  tc.validation_size = 100;
  tc.seed = 3;

  const auto data = generate_uniform(mc.n, tc.dataset_size, 11);
  const auto val = generate_uniform(mc.n, tc.validation_size, 12);
  TrainOptions opts;
  opts.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %2llu  loss %.4f  val %.4f\n", static_cast<unsigned long long>(r.epoch),
                r.train_loss, r.val_mean_length);
  };
  const TrainResult res = train(mc, tc, data, val, opts);
  const Snapshot& best = *res.best;

  const auto test = generate_uniform(mc.n, 100, 13);
  double model = 0.0, nn = 0.0, opt = 0.0;
  for (const auto& inst : test) {
    const auto d = distance_matrix(inst);
    model += infer_deterministic(best.params, mc, inst).length;
    nn += greedy_nn(d).length;
    opt += held_karp(d).length;
  }
  const double m = static_cast<double>(test.size());
  std::printf("mean length: model %.4f  nearest neighbour %.4f  optimal %.4f\n", model / m, nn / m,
              opt / m);
  return 0;
}
