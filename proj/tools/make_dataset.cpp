#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "advsep/model.hpp"

int main(int argc, char** argv) {
  CLI::App app{"generate a two-cluster labeled dataset as csv"};
  std::size_t d = 64, n = 100;
  double separation = 1.0;
  std::uint64_t seed = 1;
  std::string out;
  app.add_option("-d,--dim", d, "input dimension")->check(CLI::PositiveNumber);
  app.add_option("-n,--samples", n, "number of samples")->check(CLI::PositiveNumber);
  app.add_option("-s,--separation", separation, "cluster mean offset along a random unit direction");
  app.add_option("--seed", seed, "rng seed");
  app.add_option("-o,--out", out, "output csv path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    advsep::Rng rng(seed);
    advsep::LabeledDataset ds = advsep::make_two_cluster_dataset(d, n, separation, rng);
    advsep::save_dataset_csv(ds, out);
    std::printf("wrote %s (%zu samples, dim %zu)\n", out.c_str(), ds.n(), ds.dim());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
