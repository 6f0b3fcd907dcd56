#include "gdemed/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <vector>

namespace gdemed {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string value;
  int line = 0;
  bool used = false;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : source_(std::move(source)) {
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']') fail(line, "malformed section header '" + text + "'");
        section = trim(text.substr(1, text.size() - 2));
        if (section.empty()) fail(line, "empty section name");
        if (sections_.count(section)) fail(line, "duplicate section [" + section + "]");
        sections_[section].line = line;
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) fail(line, "expected 'key = value', got '" + text + "'");
      const std::string key = trim(text.substr(0, eq));
      if (key.empty()) fail(line, "missing key before '='");
      auto& entries = sections_[section].entries;
      if (entries.count(key)) fail(line, "duplicate key '" + key + "'" + where(section));
      entries[key] = {trim(text.substr(eq + 1)), line};
    }
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(source_ + ": " + msg); }

  static std::string where(const std::string& section) { return section.empty() ? "" : " in [" + section + "]"; }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

  Entry* find(const std::string& section, const std::string& key) {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto e = s->second.entries.find(key);
    if (e == s->second.entries.end()) return nullptr;
    e->second.used = true;
    return &e->second;
  }

  double number(const Entry& e, const std::string& key) const {
    double v = 0;
    const auto& s = e.value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      fail(e.line, "key '" + key + "': '" + s + "' is not a number");
    return v;
  }

  long long integer(const Entry& e, const std::string& key) const {
    const double v = number(e, key);
    if (v != static_cast<double>(static_cast<long long>(v)))
      fail(e.line, "key '" + key + "': '" + e.value + "' is not an integer");
    return static_cast<long long>(v);
  }

  bool boolean(const Entry& e, const std::string& key) const {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    fail(e.line, "key '" + key + "': expected true or false, got '" + e.value + "'");
  }

  std::vector<std::string> list(const Entry& e) const {
    std::vector<std::string> out;
    std::stringstream ss(e.value);
    for (std::string item; std::getline(ss, item, ',');) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> numbers(const Entry& e, const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : list(e)) out.push_back(number(Entry{item, e.line, true}, key));
    if (out.empty()) fail(e.line, "key '" + key + "': empty list");
    return out;
  }

  void check_all_used() const {
    for (const auto& [name, sec] : sections_)
      for (const auto& [key, e] : sec.entries)
        if (!e.used) fail(e.line, "unknown key '" + key + "'" + where(name));
  }

  void check_sections(std::initializer_list<const char*> known) const {
    for (const auto& [name, sec] : sections_)
      if (!name.empty() && std::find_if(known.begin(), known.end(), [&](const char* k) { return name == k; }) ==
                               known.end())
        fail(sec.line, "unknown section [" + name + "]");
  }

 private:
  struct Section {
    int line = 0;
    std::map<std::string, Entry> entries;
  };
  std::string source_;
  std::map<std::string, Section> sections_;
};

}  // namespace

StudyConfig parse_config(std::istream& in, const std::string& source) {
  Reader r(in, source);
  r.check_sections({"scenario", "study", "calibrate", "grid"});
  StudyConfig c;

  const Entry* version = r.find("", "schema_version");
  if (!version) r.fail("missing key 'schema_version'");
  c.schema_version = static_cast<int>(r.integer(*version, "schema_version"));
  if (c.schema_version != kSchemaVersion)
    r.fail(version->line, "unsupported schema_version " + version->value + " (expected " +
                              std::to_string(kSchemaVersion) + ")");

  auto num = [&](const char* sec, const char* key, auto& target) {
    if (const Entry* e = r.find(sec, key)) {
      using T = std::remove_reference_t<decltype(target)>;
      if constexpr (std::is_integral_v<T>) target = static_cast<T>(r.integer(*e, key));
      else target = static_cast<T>(r.number(*e, key));
      return true;
    }
    return false;
  };
  auto flag = [&](const char* sec, const char* key, bool& target) {
    if (const Entry* e = r.find(sec, key)) target = r.boolean(*e, key);
  };
  auto choice = [&](const char* sec, const char* key, std::initializer_list<const char*> options,
                    const std::function<void(const std::string&)>& set) {
    const Entry* e = r.find(sec, key);
    if (!e) return;
    for (const char* o : options)
      if (e->value == o) return set(e->value);
    std::string allowed;
    for (const char* o : options) allowed += std::string(allowed.empty() ? "" : ", ") + o;
    r.fail(e->line, std::string("key '") + key + "': '" + e->value + "' is not one of " + allowed);
  };

  auto& p = c.params;
  num("scenario", "id", c.study.scenario_id);
  num("scenario", "n", p.n);
  num("scenario", "p_treat", p.p_treat);
  num("scenario", "e_dm", p.e_dm);
  num("scenario", "y0_mean", p.baseline_mean[0]);
  num("scenario", "decline_mean", p.baseline_mean[1]);
  num("scenario", "y0_var", p.baseline_cov(0, 0));
  num("scenario", "decline_var", p.baseline_cov(1, 1));
  if (num("scenario", "y0_decline_cov", p.baseline_cov(0, 1))) p.baseline_cov(1, 0) = p.baseline_cov(0, 1);
  num("scenario", "y0_lo", p.baseline_bounds.lo);
  num("scenario", "y0_hi", p.baseline_bounds.hi);
  num("scenario", "richards_beta", p.richards_beta);
  const bool has_tau = num("scenario", "tau", p.tau);
  num("scenario", "scale_max", p.scale_max);
  choice("scenario", "ie_mechanism", {"sigmoid", "threshold"},
         [&](const std::string& v) { p.ie_mechanism = v == "sigmoid" ? IeMechanism::sigmoid : IeMechanism::threshold; });
  num("scenario", "ie_center", p.ie_center);
  num("scenario", "ie_slope", p.ie_slope);
  num("scenario", "ie_threshold", p.ie_threshold);
  choice("scenario", "effect_onset", {"at_initiation", "after_initiation"}, [&](const std::string& v) {
    p.effect_onset = v == "at_initiation" ? EffectOnset::at_initiation : EffectOnset::after_initiation;
  });
  num("scenario", "sym_mean", p.sym_effect.mean);
  num("scenario", "sym_sd", p.sym_effect.sd);
  num("scenario", "sym_lo", p.sym_effect.lo);
  num("scenario", "sym_hi", p.sym_effect.hi);
  flag("scenario", "outcome_rounding", p.outcome_rounding);

  auto& s = c.study;
  choice("study", "profile", {"desk", "full"}, [&](const std::string& v) {
    if (v == "full") {
      s.nsim = 10000;
      s.B = 1000;
    }
  });
  num("study", "nsim", s.nsim);
  num("study", "B", s.B);
  if (const Entry* e = r.find("study", "methods")) {
    s.methods.clear();
    for (const auto& name : r.list(*e)) {
      try {
        s.methods.push_back(parse_method(name));
      } catch (const std::invalid_argument&) {
        r.fail(e->line, "key 'methods': unknown method '" + name + "'");
      }
    }
    if (s.methods.empty()) r.fail(e->line, "key 'methods': empty list");
  }
  flag("study", "bootstrap", s.bootstrap);
  flag("study", "jackknife", s.jackknife);
  choice("study", "bootstrap_test", {"wald", "basic_ci"}, [&](const std::string& v) {
    s.bootstrap_test = v == "wald" ? BootstrapTest::wald : BootstrapTest::basic_ci;
  });
  num("study", "seed", s.master_seed);
  num("study", "threads", s.threads);
  num("study", "max_failure_share", s.max_failure_share);
  double theta = 0;
  if (num("study", "theta_true", theta)) c.theta_true = theta;
  num("study", "oracle_n", c.oracle_n);
  auto& g = s.analysis.gest;
  choice("study", "weighting", {"inverse_se", "inverse_variance"}, [&](const std::string& v) {
    g.weighting = v == "inverse_se" ? Weighting::inverse_se : Weighting::inverse_variance;
  });
  flag("study", "mod1_restrict_sym15", g.mod1_restrict_sym15);
  num("study", "mod3_tol", g.mod3_tol);
  num("study", "mod3_max_iter", g.mod3_max_iter);
  choice("study", "mask", {"at_initiation", "after_initiation"}, [&](const std::string& v) {
    s.analysis.mask = v == "at_initiation" ? MaskRule::at_initiation : MaskRule::after_initiation;
  });

  if (r.has_section("calibrate")) {
    CalibrateBlock cb;
    if (!num("calibrate", "target_sd", cb.target_sd)) r.fail("missing key 'target_sd' in [calibrate]");
    double share = 0;
    if (num("calibrate", "share", share)) cb.share = share;
    c.calibrate = cb;
  }
  if (r.has_section("grid")) {
    GridSpec gs;
    const Entry* sym = r.find("grid", "sym_sd");
    if (!sym) r.fail("missing key 'sym_sd' in [grid]");
    gs.sym_sd = r.numbers(*sym, "sym_sd");
    const Entry* sd = r.find("grid", "target_sd");
    const Entry* share = r.find("grid", "share");
    if (sd && share) r.fail(share->line, "[grid] takes either 'target_sd' or 'share', not both");
    if (!sd && !share) r.fail("missing key 'target_sd' or 'share' in [grid]");
    gs.axis = sd ? GridSpec::Axis::target_sd : GridSpec::Axis::decline_share;
    gs.axis_values = sd ? r.numbers(*sd, "target_sd") : r.numbers(*share, "share");
    num("grid", "fixed_target_sd", gs.fixed_target_sd);
    double fs = 0;
    if (num("grid", "fixed_share", fs)) gs.fixed_share = fs;
    num("grid", "oracle_n", gs.oracle_n);
    num("grid", "calibration_n", gs.calibration.n_patients);
    c.grid = gs;
  }
  if (!has_tau && !c.calibrate && !c.grid) r.fail("missing key 'tau' in [scenario] (required without [calibrate])");
  r.check_all_used();
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("invalid scenario: ") + e.what());
  }
  if (s.nsim < 1) r.fail("key 'nsim' must be at least 1");
  if (s.bootstrap && s.B < 2) r.fail("key 'B' must be at least 2");
  return c;
}

StudyConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, path);
}

}  // namespace gdemed
