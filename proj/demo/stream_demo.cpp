// Streams simulated instrument data through a LATE confidence sequence and
// stops once the interval excludes zero.

#include <cstdio>

#include "avdml/avdml.hpp"

int main() {
  using namespace avdml;

  const auto params = sim::LateDgpParams::draw(42);
  const auto sample = sim::gen_late(3000, params, 7);

  StreamConfig cfg;
  cfg.estimand = Estimand::late;
  cfg.k_folds = 4;
  cfg.burn_in = 300;
  cfg.stop_rule = StopRule::excludes_zero();
  Stream stream(cfg);

  for (const auto& obs : sample.observations) {
    stream.push(obs);
    if (stream.size() % 300 != 0) continue;
    const auto p = stream.try_peek();
    if (!p) continue;
    std::printf("n=%5lld  theta=%7.4f  cs=[%7.4f, %7.4f]  running=[%7.4f, %7.4f]%s\n",
                static_cast<long long>(p->n), p->theta_hat, p->lower, p->upper, p->lower_int,
                p->upper_int, p->stopped ? "  stop" : "");
  }
  std::printf("true effect %.1f, rho %.5f\n", sample.theta, *stream.rho());
  return 0;
}
