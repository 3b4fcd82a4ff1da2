#include <CLI11.hpp>
#include <anerf/checkpoint.hpp>
#include <anerf/gradient_suite.hpp>
#include <anerf/metrics.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anerf;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> shots;
  std::optional<int> steps;
  std::string ablation;
  std::string out = ".";
  std::string data;
  std::string checkpoint;
  std::string actor;
  std::string pred;
  bool from_scratch = false;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

class JsonLog {
 public:
  explicit JsonLog(const fs::path& path) : file_(path, std::ios::app) {
    if (!file_) throw std::runtime_error("cannot open log " + path.string());
  }
  void write(json record) {
    record["time"] = timestamp();
    const std::string line = record.dump();
    file_ << line << '\n';
    file_.flush();
    std::cout << line << '\n';
  }

 private:
  std::ofstream file_;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c;
  if (!o.preset.empty()) apply_preset(c, o.preset);
  if (!o.config_path.empty()) apply_config_text(c, read_file(o.config_path));
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) apply_config_value(c, "seed", std::to_string(*o.seed));
  if (o.shots) c.finetune.shots = *o.shots;
  if (!o.ablation.empty()) c.model.ablation = parse_ablation(o.ablation);
  if (o.steps) (o.command == "finetune" ? c.finetune.steps : c.train.steps) = *o.steps;
  return c;
}

void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw UsageError(command + " requires " + flag);
}

void write_run_record(const fs::path& out, const std::string& command, const RunConfig& c) {
  fs::create_directories(out);
  write_file_atomic(out / "config.txt", config_text(c));
  const json run = {{"command", command}, {"config_hash", config_hash(c)}, {"time", timestamp()}};
  write_file_atomic(out / (command + ".run.json"), run.dump(2) + "\n");
}

json step_json(const StepRecord& r, const std::string& stage) {
  json j = r;
  j["event"] = "step";
  j["stage"] = stage;
  return j;
}

int cmd_gen_data(const Options& o, const RunConfig& c) {
  make_dataset(c.data, o.out);
  write_run_record(o.out, "gen-data", c);
  std::cout << "dataset written to " << o.out << " (config " << config_hash(c) << ")\n";
  return 0;
}

int cmd_pretrain(const Options& o, RunConfig c) {
  require(o.data, "--data", "pretrain");
  const Dataset data = load_dataset(o.data);
  Checkpoint ck;
  if (!o.checkpoint.empty()) {
    ck = load_checkpoint(o.checkpoint);
    if (ck.stage != "pretrain") throw UsageError("pretrain: --checkpoint must be a pretraining checkpoint");
    if (o.steps) ck.config.train.steps = *o.steps;
    c = ck.config;
  } else {
    ck.config = c;
    ck.stage = "pretrain";
    ck.state = make_state(c.model, c.train.adam, c.seed);
  }
  const fs::path out(o.out);
  write_run_record(out, "pretrain", c);
  JsonLog log(out / "pretrain.log.jsonl");
  log.write({{"event", "start"}, {"stage", "pretrain"}, {"config_hash", config_hash(c)}, {"step", ck.state.step}});
  const auto path = out / "pretrain.ckpt";
  pretrain(ck.state, data, c.train, -1, [&](const StepRecord& r, const TrainState& st) {
    log.write(step_json(r, "pretrain"));
    if (c.train.checkpoint_every > 0 && st.step % c.train.checkpoint_every == 0) {
      ck.config = c;
      save_checkpoint(path, ck);
    }
  });
  save_checkpoint(path, ck);
  log.write({{"event", "done"}, {"stage", "pretrain"}, {"checkpoint", path.string()}, {"step", ck.state.step}});
  return 0;
}

int cmd_finetune(const Options& o, RunConfig c) {
  require(o.data, "--data", "finetune");
  require(o.actor, "--actor", "finetune");
  const Dataset data = load_dataset(o.data);
  const ActorData& actor = data.actor(o.actor);
  Checkpoint ck;
  if (o.from_scratch) {
    ck.config = c;
    ck.state = finetune_state(SceneModel(c.model, c.seed), c.train.adam, c.seed);
  } else {
    require(o.checkpoint, "--checkpoint (or --from-scratch)", "finetune");
    ck = load_checkpoint(o.checkpoint);
    if (ck.stage == "finetune") {
      if (ck.actor != o.actor) throw UsageError("finetune: checkpoint belongs to actor " + ck.actor);
      if (o.steps) ck.config.finetune.steps = *o.steps;
      c = ck.config;
    } else {
      // Architecture comes from the pretrained model; the few-shot protocol from the flags.
      c.model = ck.config.model;
      ck.config = c;
      ck.state = finetune_state(ck.state.model, c.train.adam, c.seed);
    }
  }
  ck.stage = "finetune";
  ck.actor = o.actor;
  const fs::path out(o.out);
  write_run_record(out, "finetune", c);
  JsonLog log(out / ("finetune_" + o.actor + ".log.jsonl"));
  log.write({{"event", "start"},
             {"stage", "finetune"},
             {"actor", o.actor},
             {"shots", c.finetune.shots},
             {"from_scratch", o.from_scratch},
             {"config_hash", config_hash(c)}});
  const auto path = out / ("finetune_" + o.actor + ".ckpt");
  finetune(ck.state, actor, c.finetune, c.train, -1, [&](const StepRecord& r, const TrainState& st) {
    log.write(step_json(r, "finetune"));
    if (c.train.checkpoint_every > 0 && st.step % c.train.checkpoint_every == 0) save_checkpoint(path, ck);
  });
  save_checkpoint(path, ck);
  log.write({{"event", "done"}, {"stage", "finetune"}, {"checkpoint", path.string()}, {"step", ck.state.step}});
  return 0;
}

Checkpoint load_finetuned(const Options& o, const std::string& command) {
  require(o.checkpoint, "--checkpoint", command);
  Checkpoint ck = load_checkpoint(o.checkpoint);
  if (ck.stage != "finetune") throw UsageError(command + ": needs a fine-tuned checkpoint");
  return ck;
}

int cmd_render(const Options& o) {
  require(o.data, "--data", "render");
  const Checkpoint ck = load_finetuned(o, "render");
  const Dataset data = load_dataset(o.data);
  const ActorData& actor = data.actor(ck.actor);
  const Conditioning cond = fixed_conditioning(ck.state.model, actor, ck.state.support);
  const RenderSettings settings{ck.config.render.samples, Vec3::Ones()};
  const fs::path dir = fs::path(o.out) / actor.id;
  fs::create_directories(dir);
  write_run_record(o.out, "render", ck.config);
  for (int f : actor.frames_with_tag("eval")) {
    const auto& fr = actor.frames[f];
    const Image img =
        render_image(ck.state.model, cond, actor.skeleton, fr.pose, fr.camera, settings, ck.config.render.chunk);
    char name[16];
    std::snprintf(name, sizeof name, "%04d.png", fr.index);
    write_png(dir / name, img);
  }
  std::cout << "rendered " << actor.frames_with_tag("eval").size() << " views to " << dir.string() << "\n";
  return 0;
}

json report_json(const std::string& actor, const EvalResult& r, const std::string& hash) {
  json views = json::array();
  for (const auto& v : r.views) views.push_back({{"frame", v.frame}, {"psnr", v.psnr}, {"ssim", v.ssim}});
  return {{"actor", actor},
          {"config_hash", hash},
          {"views", views},
          {"view_count", r.views.size()},
          {"mean_psnr", r.mean_psnr},
          {"mean_ssim", r.mean_ssim}};
}

int cmd_eval(const Options& o, const RunConfig& c) {
  require(o.data, "--data", "eval");
  const Dataset data = load_dataset(o.data);
  json report;
  if (!o.pred.empty()) {
    // Scores a directory of PNGs named by frame index against ground truth.
    require(o.actor, "--actor", "eval --pred");
    const ActorData& actor = data.actor(o.actor);
    EvalResult r;
    for (int f : actor.frames_with_tag("eval")) {
      const auto& fr = actor.frames[f];
      char name[16];
      std::snprintf(name, sizeof name, "%04d.png", fr.index);
      const Image pred = read_png(fs::path(o.pred) / name);
      r.views.push_back({fr.index, psnr(pred, fr.image), ssim(pred, fr.image)});
    }
    for (const auto& v : r.views) {
      r.mean_psnr += v.psnr / r.views.size();
      r.mean_ssim += v.ssim / r.views.size();
    }
    report = report_json(o.actor, r, config_hash(c));
  } else {
    const Checkpoint ck = load_finetuned(o, "eval");
    const ActorData& actor = data.actor(ck.actor);
    const Conditioning cond = fixed_conditioning(ck.state.model, actor, ck.state.support);
    const EvalResult r = evaluate(ck.state.model, cond, actor, RenderSettings{ck.config.render.samples, Vec3::Ones()});
    report = report_json(ck.actor, r, config_hash(ck.config));
    report["shots"] = ck.config.finetune.shots;
  }
  fs::create_directories(o.out);
  const auto path = fs::path(o.out) / ("eval_" + report["actor"].get<std::string>() + ".json");
  write_file_atomic(path, report.dump(2) + "\n");
  std::cout << "mean PSNR " << report["mean_psnr"].get<double>() << " dB, mean SSIM "
            << report["mean_ssim"].get<double>() << " over " << report["view_count"].get<std::size_t>()
            << " views -> " << path.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o) {
  bool ok = true;
  json results = json::array();
  for (const auto& e : run_op_gradient_suite()) {
    results.push_back({{"case", e.name}, {"worst_rel_error", e.worst}, {"passed", e.passed}});
    std::cout << (e.passed ? "PASS " : "FAIL ") << e.name << " " << e.worst << "\n";
    ok = ok && e.passed;
  }
  const auto pipe = pipeline_gradient_check();
  std::cout << (pipe.passed ? "PASS " : "FAIL ") << "pipeline " << pipe.worst << "\n";
  ok = ok && pipe.passed;
  results.push_back({{"case", "pipeline"}, {"worst_rel_error", pipe.worst}, {"passed", pipe.passed}});
  if (o.out != ".") {
    fs::create_directories(o.out);
    write_file_atomic(fs::path(o.out) / "gradcheck.json", results.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot articulated NeRF on synthetic capsule actors"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "write a synthetic actor dataset"},
      {"pretrain", "category-level training on the train actors"},
      {"finetune", "few-shot fitting of one test actor"},
      {"render", "render the held-out views of a fine-tuned actor"},
      {"eval", "PSNR/SSIM report on the held-out views"},
      {"gradcheck", "finite-difference checks of every op and the toy pipeline"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "ci or full");
    sub->add_option("--set", o.overrides, "key=value override (repeatable)");
    sub->add_option("--seed", o.seed);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--data", o.data, "dataset directory");
    sub->add_option("--checkpoint", o.checkpoint);
    sub->add_option("--actor", o.actor);
    sub->add_option("--shots", o.shots);
    sub->add_option("--steps", o.steps);
    sub->add_option("--ablation", o.ablation)
        ->check(CLI::IsMember({"none", "no-deform", "no-pixel-feat", "no-body-feat"}));
    if (name == "finetune") sub->add_flag("--from-scratch", o.from_scratch, "start from a fresh model");
    if (name == "eval") sub->add_option("--pred", o.pred, "directory of PNGs to score instead of a checkpoint");
    sub->callback([&o, name] { o.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    const RunConfig c = resolve_config(o);
    if (o.command == "gen-data") return cmd_gen_data(o, c);
    if (o.command == "pretrain") return cmd_pretrain(o, c);
    if (o.command == "finetune") return cmd_finetune(o, c);
    if (o.command == "render") return cmd_render(o);
    if (o.command == "eval") return cmd_eval(o, c);
    return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
