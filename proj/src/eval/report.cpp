#include "curio/eval/report.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "curio/errors.hpp"

namespace curio::eval {

using json = nlohmann::json;

namespace {

constexpr std::size_t idx(Group g) { return static_cast<std::size_t>(g); }

}  // namespace

void EvalReport::aggregate() {
  mean = {};
  if (scenes.empty()) return;
  const double n = static_cast<double>(scenes.size());
  for (const SceneResult& s : scenes) {
    mean.param += s.param;
    mean.dssim += s.dssim;
    mean.count_error += s.count_error;
    for (std::size_t g = 0; g < 5; ++g) mean.group[g] += s.group[g];
  }
  mean.param /= n;
  mean.dssim /= n;
  mean.count_error /= n;
  for (double& g : mean.group) g /= n;
}

EvalReport evaluate_codes(const std::vector<SceneCode>& pred, const std::vector<SceneCode>& gt,
                          const worlds::WorldSpec& world, const render::Camera& camera,
                          const EvalOptions& options) {
  if (pred.size() != gt.size()) {
    throw CountMismatch("evaluation got " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(gt.size()) + " scenes");
  }
  EvalReport report;
  report.world = world.name;
  report.groups = world.groups;
  const bool variable = !world.fixed_count();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    SceneResult r;
    const SceneCode kept =
        variable ? select_confident(pred[i], options.confidence_threshold) : pred[i];
    const ParamError e = variable ? matched_param_metric(kept, gt[i], options.weights, world)
                                  : param_metric(kept, gt[i], options.weights, world);
    r.param = e.total;
    r.group = e.group;
    if (world.groups.has(Group::confidence)) {
      r.group[idx(Group::confidence)] = confidence_error(pred[i], gt[i]);
    }
    r.count_error = std::abs(static_cast<double>(kept.objects.size()) -
                             static_cast<double>(gt[i].objects.size()));
    try {
      r.dssim = dssim(render::render_scene(pred[i], world, camera, options.settings),
                      render::render_scene(gt[i], world, camera, options.settings));
    } catch (const BehindCamera&) {
      r.dssim = 1.0;  // a prediction the held-out camera cannot see scores worst
    }
    report.scenes.push_back(r);
  }
  report.aggregate();
  return report;
}

Ratios ratio_report(const EvalReport& report, const EvalReport& reference) {
  auto ratio = [](double a, double b) -> std::optional<double> {
    if (!(b > 0.0)) return std::nullopt;
    return a / b;
  };
  Ratios r;
  r.param = ratio(report.mean.param, reference.mean.param);
  r.dssim = ratio(report.mean.dssim, reference.mean.dssim);
  for (std::size_t g = 0; g < 5; ++g) r.group[g] = ratio(report.mean.group[g], reference.mean.group[g]);
  return r;
}

namespace {

json metrics_json(const Metrics& m, const GroupSet& groups) {
  json j = {{"param", m.param}, {"dssim", m.dssim}, {"count_error", m.count_error}};
  for (Group g : kAllGroups) {
    if (groups.has(g)) j[group_name(g)] = m.group[idx(g)];
  }
  return j;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string report_to_json(const EvalReport& report, const Ratios* ratios) {
  json j;
  j["world"] = report.world;
  json gl = json::array();
  for (Group g : kAllGroups) {
    if (report.groups.has(g)) gl.push_back(group_name(g));
  }
  j["groups"] = gl;
  j["scenes"] = report.scenes.size();
  j["mean"] = metrics_json(report.mean, report.groups);
  json per = json::array();
  for (const SceneResult& s : report.scenes) {
    per.push_back(metrics_json({s.param, s.group, s.dssim, s.count_error}, report.groups));
  }
  j["per_scene"] = per;
  if (ratios) {
    json r = {{"param", opt(ratios->param)}, {"dssim", opt(ratios->dssim)}};
    for (Group g : kAllGroups) {
      if (report.groups.has(g)) r[group_name(g)] = opt(ratios->group[idx(g)]);
    }
    j["ratios"] = r;
  }
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    r.world = j.at("world").get<std::string>();
    for (const auto& g : j.at("groups")) r.groups.insert(parse_group(g.get<std::string>()));
    const json& m = j.at("mean");
    r.mean.param = m.at("param").get<double>();
    r.mean.dssim = m.at("dssim").get<double>();
    r.mean.count_error = m.value("count_error", 0.0);
    for (Group g : kAllGroups) {
      if (r.groups.has(g)) r.mean.group[idx(g)] = m.at(group_name(g)).get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("not an evaluation report: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("not an evaluation report: ") + e.what());
  }
}

std::string format_table(const EvalReport& report, const Ratios* ratios) {
  struct Column {
    std::string title;
    double value;
    std::optional<double> ratio;
  };
  std::vector<Column> cols;
  cols.push_back({"Image (DSSIM)", report.mean.dssim, ratios ? ratios->dssim : std::nullopt});
  cols.push_back({"Param", report.mean.param, ratios ? ratios->param : std::nullopt});
  for (Group g : kAllGroups) {
    if (!report.groups.has(g)) continue;
    std::string title;
    double value = report.mean.group[idx(g)];
    switch (g) {
      case Group::position: title = "Position (m)"; break;
      case Group::color: title = "Color"; break;
      case Group::rotation: title = "Rotation (deg)"; value *= 180.0 / std::numbers::pi; break;
      case Group::confidence: title = "Confidence"; break;
      case Group::light: title = "Direction (deg)"; value *= 180.0 / std::numbers::pi; break;
    }
    cols.push_back({title, value, ratios ? ratios->group[idx(g)] : std::nullopt});
  }
  std::ostringstream out;
  char buf[64];
  out << report.world << " (" << report.scenes.size() << " scenes)\n";
  auto row = [&](const std::string& label, auto cell) {
    std::snprintf(buf, sizeof buf, "%-8s", label.c_str());
    out << buf;
    for (const Column& c : cols) {
      std::snprintf(buf, sizeof buf, " %16s", cell(c).c_str());
      out << buf;
    }
    out << "\n";
  };
  row("", [](const Column& c) { return c.title; });
  row("value", [&](const Column& c) {
    std::snprintf(buf, sizeof buf, "%.6g", c.value);
    return std::string(buf);
  });
  if (ratios) {
    row("ratio", [&](const Column& c) {
      if (!c.ratio) return std::string("n/a");
      std::snprintf(buf, sizeof buf, "%.2f", *c.ratio);
      return std::string(buf);
    });
  }
  std::snprintf(buf, sizeof buf, "%.4g", report.mean.count_error);
  out << "count error " << buf << "\n";
  return out.str();
}

}  // namespace curio::eval
