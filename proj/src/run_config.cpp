#include "cyclecl/run_config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cyclecl/errors.hpp"

namespace cyclecl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ParameterError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto& t = cfg.train;
  const auto& v = value;
  if (key == "epochs") t.epochs = parse_number<int>(key, v);
  else if (key == "batch_size") t.batch_size = parse_number<int>(key, v);
  else if (key == "lr") t.lr = parse_number<double>(key, v);
  else if (key == "momentum") t.momentum = parse_number<double>(key, v);
  else if (key == "weight_decay") t.weight_decay = parse_number<double>(key, v);
  else if (key == "lr_schedule") t.lr_schedule = wrap(key, [&] { return parse_lr_schedule(v); });
  else if (key == "loss") t.loss_preset = wrap(key, [&] { return parse_loss_preset(v); });
  else if (key == "temperature") t.loss.temperature = parse_number<double>(key, v);
  else if (key == "lambda") t.loss.lambda = parse_number<double>(key, v);
  else if (key == "include_self_view") t.loss.include_self_view = parse_bool(key, v);
  else if (key == "backward_negatives") {
    t.loss.backward_negatives = wrap(key, [&] { return parse_backward_negatives(v); });
  } else if (key == "top_k") {
    if (v == "none") t.loss.top_k.reset();
    else t.loss.top_k = parse_number<int>(key, v);
  } else if (key == "intra_image_weight") t.loss.intra_image_weight = parse_number<double>(key, v);
  else if (key == "capacity") t.capacity = parse_number<int>(key, v);
  else if (key == "m_nb") t.m_nb = parse_number<int>(key, v);
  else if (key == "momentum_coefficient") {
    t.momentum_config.momentum_coefficient = parse_number<double>(key, v);
  } else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "dataset") cfg.dataset = v;
  else if (key == "output_dir") cfg.output_dir = v;
  else if (key == "input_height") t.encoder.input_height = parse_number<int>(key, v);
  else if (key == "input_width") t.encoder.input_width = parse_number<int>(key, v);
  else if (key == "hidden_widths") t.encoder.hidden_widths = parse_int_list(key, v);
  else if (key == "embedding_dim") t.encoder.embedding_dim = parse_number<int>(key, v);
  else if (key == "projection_dim") t.encoder.projection_dim = parse_number<int>(key, v);
  else if (key == "crop_scale_min") t.augment.crop_scale_min = parse_number<double>(key, v);
  else if (key == "crop_scale_max") t.augment.crop_scale_max = parse_number<double>(key, v);
  else if (key == "aspect_jitter") t.augment.aspect_jitter = parse_number<double>(key, v);
  else if (key == "noise_std") t.augment.noise_std = parse_number<double>(key, v);
  else if (key == "brightness_jitter") t.augment.brightness_jitter = parse_number<double>(key, v);
  else if (key == "contrast_jitter") t.augment.contrast_jitter = parse_number<double>(key, v);
  else if (key == "log_wall_time") t.log_wall_time = parse_bool(key, v);
  else if (key == "check_invariants") t.check_invariants = parse_bool(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, RunConfig base, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig read_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), std::move(base), path.string());
}

std::string echo_run_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epochs = " << t.epochs << "\n";
  os << "batch_size = " << t.batch_size << "\n";
  os << "lr = " << t.lr << "\n";
  os << "momentum = " << t.momentum << "\n";
  os << "weight_decay = " << t.weight_decay << "\n";
  os << "lr_schedule = " << to_string(t.lr_schedule) << "\n";
  os << "loss = " << to_string(t.loss_preset) << "\n";
  os << "temperature = " << t.loss.temperature << "\n";
  os << "lambda = " << t.loss.lambda << "\n";
  os << "include_self_view = " << (t.loss.include_self_view ? "true" : "false") << "\n";
  os << "backward_negatives = " << to_string(t.loss.backward_negatives) << "\n";
  os << "top_k = ";
  if (t.loss.top_k) os << *t.loss.top_k;
  else os << "none";
  os << "\n";
  os << "intra_image_weight = " << t.loss.intra_image_weight << "\n";
  os << "capacity = " << t.capacity << "\n";
  os << "m_nb = " << t.m_nb << "\n";
  os << "momentum_coefficient = " << t.momentum_config.momentum_coefficient << "\n";
  os << "seed = " << t.seed << "\n";
  os << "dataset = " << cfg.dataset << "\n";
  os << "output_dir = " << cfg.output_dir << "\n";
  os << "input_height = " << t.encoder.input_height << "\n";
  os << "input_width = " << t.encoder.input_width << "\n";
  os << "hidden_widths = ";
  for (std::size_t i = 0; i < t.encoder.hidden_widths.size(); ++i) {
    os << (i ? "," : "") << t.encoder.hidden_widths[i];
  }
  os << "\n";
  os << "embedding_dim = " << t.encoder.embedding_dim << "\n";
  os << "projection_dim = " << t.encoder.projection_dim << "\n";
  os << "crop_scale_min = " << t.augment.crop_scale_min << "\n";
  os << "crop_scale_max = " << t.augment.crop_scale_max << "\n";
  os << "aspect_jitter = " << t.augment.aspect_jitter << "\n";
  os << "noise_std = " << t.augment.noise_std << "\n";
  os << "brightness_jitter = " << t.augment.brightness_jitter << "\n";
  os << "contrast_jitter = " << t.augment.contrast_jitter << "\n";
  os << "log_wall_time = " << (t.log_wall_time ? "true" : "false") << "\n";
  os << "check_invariants = " << (t.check_invariants ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace cyclecl
