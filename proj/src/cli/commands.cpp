#include "curio/cli/commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "curio/cli/config.hpp"
#include "curio/errors.hpp"
#include "curio/eval/novel_view.hpp"
#include "curio/oracle/oracle.hpp"
#include "curio/render/image.hpp"

namespace curio::cli {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---- gen -----------------------------------------------------------------------

struct GenArgs {
  std::string world = "circles";
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::string out;
  bool previews = true;
};

int cmd_gen(const GenArgs& a, std::size_t workers) {
  const worlds::WorldSpec w = resolve_world(a.world, a.image_size);
  const worlds::Dataset d = worlds::generate_dataset(w, a.n, a.seed, workers);
  worlds::save_dataset(d, a.out, a.previews);
  std::cerr << "wrote " << d.size() << " scenes of world '" << w.name << "' to " << a.out << "\n";
  std::cout << "gen world=" << w.name << " n=" << d.size() << " train=" << d.split.train
            << " val=" << d.split.val << " test=" << d.split.test << " out=" << a.out << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string mode;
  double supervision_frac = -1.0;
  std::string resume;
  std::string dataset;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig c = load_experiment(a.config);
  if (!a.mode.empty()) c.train.mode = train::parse_mode(a.mode);
  if (a.supervision_frac >= 0.0) c.train.supervision_frac = a.supervision_frac;
  if (!a.dataset.empty()) c.dataset = a.dataset;
  if (!a.out.empty()) c.out = a.out;
  c.train.validate();
  if (!c.dataset) throw InvalidConfig("no dataset: set [paths] dataset or pass --dataset");
  if (!c.out) throw InvalidConfig("no output directory: set [paths] out or pass --out");

  const worlds::Dataset data = worlds::load_dataset(*c.dataset, true);
  if (const auto w = c.world(); w && !(*w == data.world)) {
    throw InvalidConfig("config world does not match the dataset's world '" + data.world.name + "'");
  }
  write_text(*c.out / "config.resolved.ini", to_text(c));

  const bool critic = c.train.mode == train::Mode::curious;
  nn::NetworkConfig net = nn::network_for(data.world, c.width_scale, c.latent_dim);
  train::TrainOptions opts;
  opts.out_dir = *c.out;
  if (!a.resume.empty()) {
    const train::CheckpointInfo info = train::read_checkpoint_info(a.resume);
    if (!(info.net.image_size == net.image_size && info.net.width_scale == net.width_scale &&
          info.net.latent_dim == net.latent_dim && info.net.n_proposals == net.n_proposals &&
          info.net.heads == net.heads)) {
      throw InvalidConfig("checkpoint " + a.resume + " was trained with a different network");
    }
    opts.resume = a.resume;
  }
  opts.on_epoch = [](const train::LogRow& r) {
    std::cerr << train::format_log_row(r) << "\n";
  };
  nn::Model model(net, critic, c.seed);
  const train::TrainResult r = train::train(model, data, c.train, opts);
  std::cout << "train mode=" << train::mode_name(c.train.mode) << " epochs=" << r.epochs
            << " converged=" << (r.converged ? 1 : 0) << " final_val_mse=" << fmt(r.final_val_mse)
            << " out=" << c.out->string() << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string reference;
  std::string out;
  std::string config;
};

int cmd_eval(const EvalArgs& a) {
  eval::EvalOptions options;
  if (!a.config.empty()) options = load_experiment(a.config).eval;
  const train::CheckpointInfo info = train::read_checkpoint_info(a.checkpoint);
  const worlds::Dataset data = worlds::load_dataset(a.dataset, true);
  nn::Model model(info.net, info.critic, 0);
  train::load_checkpoint(model, a.checkpoint);
  const eval::EvalReport report =
      eval::novel_view_eval(model, data, data.world.novel_camera, options);

  std::optional<eval::Ratios> ratios;
  if (!a.reference.empty()) {
    ratios = eval::ratio_report(report, eval::report_from_json(read_text(a.reference)));
  }
  const std::filesystem::path out(a.out.empty() ? a.checkpoint : a.out);
  write_text(out / "report.json", eval::report_to_json(report, ratios ? &*ratios : nullptr));
  const std::string table = eval::format_table(report, ratios ? &*ratios : nullptr);
  write_text(out / "report.txt", table);
  std::cerr << table;
  std::cout << "eval world=" << report.world << " scenes=" << report.scenes.size()
            << " param=" << fmt(report.mean.param) << " dssim=" << fmt(report.mean.dssim);
  if (ratios && ratios->param) std::cout << " param_ratio=" << fmt(*ratios->param);
  std::cout << " out=" << out.string() << "\n";
  return 0;
}

// ---- oracle --------------------------------------------------------------------

struct OracleArgs {
  oracle::OracleConfig cfg;
  std::string curiosity = "off";
  std::string out;
  std::size_t record_every = 100;
};

int cmd_oracle(OracleArgs a) {
  if (a.curiosity == "on") {
    a.cfg.curiosity = true;
  } else if (a.curiosity == "off") {
    a.cfg.curiosity = false;
  } else {
    throw InvalidConfig("--curiosity expects on or off, got '" + a.curiosity + "'");
  }
  const oracle::OracleResult r = oracle::optimize_joint(a.cfg, a.record_every);
  if (!a.out.empty()) {
    oracle::write_oracle_outputs(r, a.cfg, a.out);
    std::ostringstream resolved;
    resolved << "problems = " << a.cfg.problems << "\nsteps = " << a.cfg.steps
             << "\ncuriosity = " << a.curiosity << "\nweight = " << a.cfg.weight
             << "\nbandwidth = " << a.cfg.bandwidth << "\nlr = " << a.cfg.lr
             << "\nsamples = " << a.cfg.samples << "\nseed = " << a.cfg.seed
             << "\nrecord_every = " << a.record_every << "\n";
    write_text(std::filesystem::path(a.out) / "config.resolved.ini", resolved.str());
  }
  std::cerr << "oracle: " << r.final.size() << " problems after " << a.cfg.steps << " steps\n";
  std::cout << "oracle curiosity=" << a.curiosity << " problems=" << a.cfg.problems
            << " steps=" << a.cfg.steps << " collapse_fraction=" << fmt(r.collapse_fraction)
            << " success_fraction=" << fmt(r.success_fraction) << "\n";
  return 0;
}

// ---- render --------------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint;
  std::string image;
  std::string scene_json;
  std::string world = "circles";
  std::size_t image_size = 64;
  std::string out;
};

int cmd_render(const RenderArgs& a) {
  if (a.checkpoint.empty() == a.scene_json.empty()) {
    throw InvalidConfig("render takes either --checkpoint with --image or --scene-json");
  }
  if (!a.scene_json.empty()) {
    const worlds::WorldSpec w = resolve_world(a.world, a.image_size);
    const SceneCode scene = worlds::scene_from_json(read_text(a.scene_json));
    render::write_png(a.out, render::render_scene(scene, w, w.camera));
    std::cout << "render world=" << w.name << " objects=" << scene.objects.size()
              << " out=" << a.out << "\n";
    return 0;
  }
  if (a.image.empty()) throw InvalidConfig("--checkpoint needs --image");
  const train::CheckpointInfo info = train::read_checkpoint_info(a.checkpoint);
  const worlds::WorldSpec w = resolve_world(a.world, info.net.image_size);
  if (!(w.groups == info.net.heads) || w.max_objects != info.net.n_proposals) {
    throw InvalidConfig("checkpoint was not trained on world '" + w.name + "'; pass --world");
  }
  nn::Model model(info.net, info.critic, 0);
  train::load_checkpoint(model, a.checkpoint);
  const render::Image input = render::read_png(a.image);
  if (input.height != info.net.image_size || input.width != info.net.image_size) {
    throw InvalidConfig("input image is " + std::to_string(input.width) + "x" +
                        std::to_string(input.height) + ", the network expects " +
                        std::to_string(info.net.image_size) + " px");
  }
  const SceneCode code = model.predict({input}).front();
  render::write_png(a.out, render::side_by_side(input, render::render_scene(code, w, w.camera)));
  std::cerr << "predicted: " << worlds::scene_to_json(code) << "\n";
  std::cout << "render world=" << w.name << " objects=" << code.objects.size() << " out=" << a.out
            << "\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Scene-parameter inference by analysis-by-synthesis"};
  app.require_subcommand(1);
  std::size_t workers = default_workers();
  app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  GenArgs gen;
  CLI::App* g = app.add_subcommand("gen", "Generate a dataset");
  g->add_option("--world", gen.world, "circles, spheres, varied or a spec file");
  g->add_option("--n", gen.n, "Number of scenes")->required();
  g->add_option("--seed", gen.seed, "Random seed")->required();
  g->add_option("--image-size", gen.image_size, "Image side in pixels");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("!--no-previews", gen.previews, "Skip preview PNGs");

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Experiment config")->required();
  t->add_option("--mode", tr.mode, "supervised, noncur or curious");
  t->add_option("--supervision-frac", tr.supervision_frac, "Fraction of labelled images");
  t->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
  t->add_option("--dataset", tr.dataset, "Dataset directory");
  t->add_option("--out", tr.out, "Output directory");

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  e->add_option("--reference-report", ev.reference, "Report JSON to take ratios against");
  e->add_option("--out", ev.out, "Report directory (default: the checkpoint)");
  e->add_option("--config", ev.config, "Experiment config for the [eval] section");

  OracleArgs orc;
  CLI::App* o = app.add_subcommand("oracle", "Run the analytic joint-optimization experiment");
  o->add_option("--n-problems", orc.cfg.problems, "Number of problems");
  o->add_option("--steps", orc.cfg.steps, "Gradient steps");
  o->add_option("--curiosity", orc.curiosity, "on or off");
  o->add_option("--weight", orc.cfg.weight, "Discrepancy weight");
  o->add_option("--bandwidth", orc.cfg.bandwidth, "Kernel bandwidth");
  o->add_option("--lr", orc.cfg.lr, "Step size");
  o->add_option("--samples", orc.cfg.samples, "Reference samples");
  o->add_option("--seed", orc.cfg.seed, "Random seed");
  o->add_option("--record-every", orc.record_every, "Trajectory and frame interval");
  o->add_option("--out", orc.out, "Output directory");

  RenderArgs rd;
  CLI::App* r = app.add_subcommand("render", "Render a scene JSON or re-render an image");
  r->add_option("--checkpoint", rd.checkpoint, "Checkpoint directory");
  r->add_option("--image", rd.image, "Input PNG");
  r->add_option("--scene-json", rd.scene_json, "Scene code JSON");
  r->add_option("--world", rd.world, "circles, spheres, varied or a spec file");
  r->add_option("--image-size", rd.image_size, "Image side for --scene-json");
  r->add_option("--out", rd.out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*g) return cmd_gen(gen, workers);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*o) return cmd_oracle(orc);
    if (*r) return cmd_render(rd);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.exit_code();
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace curio::cli
