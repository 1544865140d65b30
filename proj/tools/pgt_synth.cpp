// pgt_synth: writes deterministic synthetic NIfTI datasets for trying the pipeline.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pgt/errors.hpp"
#include "pgt/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic <root>/images + <root>/labels NIfTI dataset"};
  pgt::synthetic::DatasetSpec spec;
  std::string root;
  std::size_t size = 64;
  bool no_gzip = false;
  app.add_option("root", root, "Dataset root directory")->required();
  app.add_option("--dataset", spec.dataset, "Dataset name (NIH, MSD, AbdomenCT-1k, ...)");
  app.add_option("--volumes", spec.volumes, "Number of volumes");
  app.add_option("--size", size, "In-plane size in pixels");
  app.add_option("--depth", spec.depth, "Slices per volume");
  app.add_option("--seed", spec.seed, "Generator seed");
  app.add_flag("--tumors", spec.tumors, "Add tumors to the middle slices of every volume");
  app.add_flag("--multi-organ", spec.multi_organ, "Add liver, kidney and spleen");
  app.add_flag("--no-gzip", no_gzip, "Write plain .nii files");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spec.width = spec.height = size;
  spec.gzip = !no_gzip;
  try {
    const auto names = pgt::synthetic::write_dataset(root, spec);
    std::cout << "wrote " << names.size() << " volume pairs to " << root << '\n';
    return 0;
  } catch (const pgt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pgt::exit_code(e.code());
  }
}
