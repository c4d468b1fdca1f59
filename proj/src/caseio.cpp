#include "vppflex/caseio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vppflex/error.hpp"

namespace vppflex::io {

namespace fs = std::filesystem;
using ptr = json::json_pointer;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "", "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string escape_token(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

// Line of every value in the text, keyed by JSON pointer. Assumes the text
// already parsed.
std::map<std::string, int> index_lines(const std::string& text) {
  struct Frame {
    bool obj;
    std::string ptr;
    std::string key;
    int index = 0;
    bool expect_key = true;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;
  auto here = [&]() -> std::string {
    if (stack.empty()) return "";
    const auto& f = stack.back();
    return f.ptr + "/" + (f.obj ? escape_token(f.key) : std::to_string(f.index));
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '"') {
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        s += text[i];
      }
      if (!stack.empty() && stack.back().obj && stack.back().expect_key) {
        stack.back().key = s;
        stack.back().expect_key = false;
      } else {
        lines.emplace(here(), line);
      }
    } else if (c == ',') {
      if (stack.empty()) continue;
      if (stack.back().obj)
        stack.back().expect_key = true;
      else
        ++stack.back().index;
    } else if (c == '{' || c == '[') {
      const std::string p = here();
      lines.emplace(p, line);
      stack.push_back({c == '{', p, {}, 0, true});
    } else if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (c == '-' || std::isdigit(static_cast<unsigned char>(c)) || c == 't' || c == 'f' || c == 'n') {
      lines.emplace(here(), line);
      while (i + 1 < text.size() && std::string(",]} \t\r\n").find(text[i + 1]) == std::string::npos) ++i;
    }
  }
  return lines;
}

}  // namespace

Document Document::load(const std::string& path) { return parse(read_text(path), path); }

Document Document::parse(const std::string& text, const std::string& name) {
  Document d;
  d.name_ = name;
  try {
    d.root_ = json::parse(text);
  } catch (const json::parse_error& e) {
    const size_t upto = std::min(static_cast<size_t>(e.byte), text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(name, line, "", "invalid JSON");
  }
  d.lines_ = index_lines(text);
  return d;
}

int Document::line_of(const std::string& pointer) const {
  std::string p = pointer;
  while (true) {
    const auto it = lines_.find(p);
    if (it != lines_.end()) return it->second;
    const auto cut = p.rfind('/');
    if (cut == std::string::npos) return 1;
    p = p.substr(0, cut);
  }
}

void Document::fail(const std::string& pointer, const std::string& message) const {
  throw ParseError(name_, line_of(pointer), pointer.empty() ? "/" : pointer, message);
}

const json& Document::at(const ptr& p) const {
  if (!root_.contains(p)) fail(p.to_string(), "missing");
  return root_.at(p);
}

const json& Document::array(const ptr& p) const {
  const auto& v = at(p);
  if (!v.is_array()) fail(p.to_string(), "expected an array");
  return v;
}

double Document::number(const ptr& p) const {
  const auto& v = at(p);
  if (!v.is_number()) fail(p.to_string(), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(p.to_string(), "not finite");
  return x;
}

double Document::number_or(const ptr& p, double fallback) const { return has(p) ? number(p) : fallback; }

int Document::integer(const ptr& p) const {
  const auto& v = at(p);
  if (!v.is_number_integer()) fail(p.to_string(), "expected an integer");
  return v.get<int>();
}

int Document::integer_or(const ptr& p, int fallback) const { return has(p) ? integer(p) : fallback; }

std::string Document::string(const ptr& p) const {
  const auto& v = at(p);
  if (!v.is_string()) fail(p.to_string(), "expected a string");
  return v.get<std::string>();
}

std::string Document::string_or(const ptr& p, const std::string& fallback) const {
  return has(p) ? string(p) : fallback;
}

std::vector<double> Document::numbers(const ptr& p) const {
  const auto& v = at(p);
  if (!v.is_array()) fail(p.to_string(), "expected an array of numbers");
  std::vector<double> out;
  for (size_t i = 0; i < v.size(); ++i) out.push_back(number(p / i));
  return out;
}

void Document::check_version() const {
  const ptr p("/format_version");
  if (!has(p)) fail("/format_version", "missing");
  if (integer(p) != kFormatVersion) fail("/format_version", "unsupported version " + std::to_string(integer(p)));
}

namespace {

std::vector<net::Phase> parse_phases(const Document& d, const ptr& p) {
  const std::string s = d.string(p);
  std::vector<net::Phase> out;
  for (char c : s) {
    const auto ph = net::parse_phase(std::string(1, c));
    if (!ph) d.fail(p.to_string(), "unknown phase '" + std::string(1, c) + "'");
    out.push_back(*ph);
  }
  if (out.empty()) d.fail(p.to_string(), "no phases");
  return out;
}

net::Connection parse_connection(const Document& d, const ptr& p, net::Connection fallback) {
  if (!d.has(p)) return fallback;
  const std::string s = d.string(p);
  if (s == "wye" || s == "Y") return net::Connection::Wye;
  if (s == "delta" || s == "D") return net::Connection::Delta;
  d.fail(p.to_string(), "expected 'wye' or 'delta'");
}

net::cplx complex_pair(const Document& d, const ptr& p) {
  const auto v = d.numbers(p);
  if (v.size() != 2) d.fail(p.to_string(), "expected [re, im]");
  return {v[0], v[1]};
}

// Slot name as its integer: phase index for wye, pair index for delta.
int parse_slot(const Document& d, const ptr& p, net::Connection conn) {
  const auto& v = d.at(p);
  if (v.is_number_integer()) return v.get<int>();
  const std::string s = d.string(p);
  if (conn == net::Connection::Wye) {
    if (const auto ph = net::parse_phase(s)) return static_cast<int>(*ph);
  } else {
    if (const auto pr = net::parse_pair(s)) return static_cast<int>(*pr);
  }
  d.fail(p.to_string(), "unknown slot '" + s + "'");
}

template <typename F>
auto wrap(const Document& d, const std::string& pointer, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    d.fail(pointer, e.what());
  }
}

}  // namespace

net::MultiphaseNetwork read_network(const std::string& path) {
  const auto d = Document::load(path);
  d.check_version();
  std::vector<net::Bus> buses;
  const auto& jb = d.array(ptr("/buses"));
  for (size_t i = 0; i < jb.size(); ++i) {
    const ptr p = ptr("/buses") / i;
    net::Bus b;
    b.id = d.string(p / "id");
    b.phases = parse_phases(d, p / "phases");
    b.connection = parse_connection(d, p / "connection", net::Connection::Wye);
    b.v_min = d.number_or(p / "v_min", 0.95);
    b.v_max = d.number_or(p / "v_max", 1.05);
    buses.push_back(std::move(b));
  }
  std::vector<net::Branch> branches;
  const auto& jl = d.array(ptr("/branches"));
  for (size_t i = 0; i < jl.size(); ++i) {
    const ptr p = ptr("/branches") / i;
    net::Branch br;
    br.from = d.string(p / "from");
    br.to = d.string(p / "to");
    br.phases = parse_phases(d, p / "phases");
    br.i_max = d.number_or(p / "i_max", 1.0);
    const int n = static_cast<int>(br.phases.size());
    Eigen::MatrixXcd z(n, n);
    if (d.has(p / "z")) {
      const auto& jz = d.at(p / "z");
      if (!jz.is_array() || static_cast<int>(jz.size()) != n) d.fail((p / "z").to_string(), "expected an n x n matrix");
      for (int r = 0; r < n; ++r) {
        if (!jz[r].is_array() || static_cast<int>(jz[r].size()) != n)
          d.fail((p / "z" / r).to_string(), "expected " + std::to_string(n) + " entries");
        for (int c = 0; c < n; ++c) z(r, c) = complex_pair(d, p / "z" / r / c);
      }
    } else {
      const auto self = complex_pair(d, p / "z_self");
      const auto mutual = d.has(p / "z_mutual") ? complex_pair(d, p / "z_mutual") : net::cplx{};
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) z(r, c) = r == c ? self : mutual;
    }
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
    if (!lu.isInvertible()) d.fail((p / "z").to_string(), "impedance matrix is singular");
    const Eigen::MatrixXcd y = lu.inverse();
    br.admittance = 0.5 * (y + y.transpose());
    branches.push_back(std::move(br));
  }
  std::array<net::cplx, 3> slack;
  const double mag = d.number_or(ptr("/slack/magnitude"), 1.0);
  std::vector<double> ang{0.0, -120.0, 120.0};
  if (d.has(ptr("/slack/angles_deg"))) {
    ang = d.numbers(ptr("/slack/angles_deg"));
    if (ang.size() != 3) d.fail("/slack/angles_deg", "expected three angles");
  }
  for (int k = 0; k < 3; ++k) slack[k] = std::polar(mag, ang[k] * std::numbers::pi / 180.0);
  return wrap(d, "", [&] {
    return net::MultiphaseNetwork(buses, branches, d.string(ptr("/pcc")), slack, d.number_or(ptr("/base_mva"), 1.0),
                                  d.number_or(ptr("/base_kv"), 12.47));
  });
}

namespace {

fleet::CapabilityPolygon parse_chart(const Document& d, const ptr& p) {
  fleet::ChartParams c;
  const std::string shape = d.string(p / "shape");
  if (shape == "box")
    c.shape = fleet::ChartShape::Box;
  else if (shape == "circle")
    c.shape = fleet::ChartShape::Circle;
  else if (shape == "chp")
    c.shape = fleet::ChartShape::Chp;
  else if (shape == "dfig")
    c.shape = fleet::ChartShape::Dfig;
  else if (shape == "polygon")
    c.shape = fleet::ChartShape::Polygon;
  else
    d.fail((p / "shape").to_string(), "unknown chart shape '" + shape + "'");
  c.p_min = d.number_or(p / "p_min", c.p_min);
  c.p_max = d.number_or(p / "p_max", c.p_max);
  c.q_min = d.number_or(p / "q_min", c.q_min);
  c.q_max = d.number_or(p / "q_max", c.q_max);
  c.s_max = d.number_or(p / "s_max", c.s_max);
  c.q_full_load_ratio = d.number_or(p / "q_full_load_ratio", c.q_full_load_ratio);
  if (c.shape == fleet::ChartShape::Polygon) {
    const auto& ja = d.at(p / "A");
    const auto b = d.numbers(p / "b");
    if (!ja.is_array() || ja.size() != b.size()) d.fail((p / "A").to_string(), "A and b differ in length");
    c.A.resize(static_cast<Eigen::Index>(b.size()), 2);
    c.b = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    for (size_t r = 0; r < b.size(); ++r) {
      const auto row = d.numbers(p / "A" / r);
      if (row.size() != 2) d.fail((p / "A" / r).to_string(), "expected [aP, aQ]");
      c.A(static_cast<Eigen::Index>(r), 0) = row[0];
      c.A(static_cast<Eigen::Index>(r), 1) = row[1];
    }
  }
  const int sides = d.integer_or(p / "sides", 8);
  return wrap(d, p.to_string(), [&] {
    auto poly = fleet::polygonize_chart(c, sides);
    poly.validate();
    return poly;
  });
}

}  // namespace

std::vector<fleet::DerUnit> read_fleet(const std::string& path, const net::MultiphaseNetwork& network) {
  const auto d = Document::load(path);
  d.check_version();
  std::vector<fleet::DerUnit> out;
  const auto& ju = d.array(ptr("/units"));
  for (size_t i = 0; i < ju.size(); ++i) {
    const ptr p = ptr("/units") / i;
    fleet::DerUnit u;
    u.id = d.string(p / "id");
    u.kind = wrap(d, (p / "kind").to_string(), [&] { return fleet::parse_kind(d.string(p / "kind")); });
    u.bus = d.string(p / "bus");
    const int bi = wrap(d, (p / "bus").to_string(), [&] { return network.bus_index(u.bus); });
    u.connection = parse_connection(d, p / "connection", network.buses()[bi].connection);
    const auto& js = d.at(p / "slots");
    if (!js.is_array() || js.empty()) d.fail((p / "slots").to_string(), "expected a nonempty array");
    for (size_t k = 0; k < js.size(); ++k) u.slots.push_back(parse_slot(d, p / "slots" / k, u.connection));
    if (d.has(p / "charts")) {
      if (d.array(p / "charts").size() != u.slots.size()) d.fail((p / "charts").to_string(), "one chart per slot");
      for (size_t k = 0; k < u.slots.size(); ++k) u.charts.push_back(parse_chart(d, p / "charts" / k));
    } else {
      u.charts.assign(u.slots.size(), parse_chart(d, p / "chart"));
    }
    u.ramp = d.number_or(p / "ramp", u.ramp);
    if (d.has(p / "ess")) {
      u.ess.alpha = d.number_or(p / "ess" / "alpha", 1.0);
      u.ess.e_min = d.number(p / "ess" / "e_min");
      u.ess.e_max = d.number(p / "ess" / "e_max");
      u.ess.e0 = d.number(p / "ess" / "e0");
    }
    if (d.has(p / "cost")) {
      u.cost.a = d.number_or(p / "cost" / "a", 0.0);
      u.cost.b = d.number_or(p / "cost" / "b", 0.0);
      u.cost.c = d.number_or(p / "cost" / "c", 0.0);
      u.cost.k_ch = d.number_or(p / "cost" / "k_ch", 0.0);
      u.cost.k_dis = d.number_or(p / "cost" / "k_dis", 0.0);
      if (u.cost.a < 0.0) d.fail((p / "cost" / "a").to_string(), "CHP cost must be convex (a >= 0)");
      if (u.cost.k_ch < 0.0 || u.cost.k_dis < 0.0) d.fail((p / "cost").to_string(), "ESS cost rates must be >= 0");
    }
    if (d.has(p / "equal_share")) {
      const auto& v = d.at(p / "equal_share");
      if (!v.is_boolean()) d.fail((p / "equal_share").to_string(), "expected true or false");
      u.equal_share = v.get<bool>();
    }
    wrap(d, p.to_string(), [&] {
      u.validate();
      return 0;
    });
    out.push_back(std::move(u));
  }
  return out;
}

Profiles read_profiles(const std::string& path, const net::MultiphaseNetwork& network) {
  const auto d = Document::load(path);
  d.check_version();
  Profiles pr;
  pr.periods = d.integer(ptr("/periods"));
  pr.dt = d.number(ptr("/dt"));
  if (pr.periods < 1) d.fail("/periods", "must be at least 1");
  if (!(pr.dt > 0.0)) d.fail("/dt", "must be positive");
  const auto& jl = d.array(ptr("/loads"));
  for (size_t i = 0; i < jl.size(); ++i) {
    const ptr p = ptr("/loads") / i;
    fleet::LoadSpec ld;
    ld.bus = d.string(p / "bus");
    const int bi = wrap(d, (p / "bus").to_string(), [&] { return network.bus_index(ld.bus); });
    ld.slot = parse_slot(d, p / "slot", network.buses()[bi].connection);
    ld.p = d.numbers(p / "p");
    if (static_cast<int>(ld.p.size()) != pr.periods)
      d.fail((p / "p").to_string(), "expected " + std::to_string(pr.periods) + " values");
    ld.phi = d.number_or(p / "phi", 0.0);
    pr.loads.push_back(std::move(ld));
  }
  if (d.has(ptr("/forecasts"))) {
    if (!d.at(ptr("/forecasts")).is_object()) d.fail("/forecasts", "expected an object keyed by unit id");
    for (const auto& [unit, series] : d.at(ptr("/forecasts")).items()) {
      const ptr p = ptr("/forecasts") / unit;
      if (!series.is_array() || static_cast<int>(series.size()) != pr.periods)
        d.fail(p.to_string(), "expected one entry per period");
      auto& out = pr.forecast.pmax[unit];
      for (size_t t = 0; t < series.size(); ++t) out.push_back(d.numbers(p / t));
    }
  }
  return pr;
}

void RunConfig::validate() const {
  for (double g : gamma_grid)
    if (!(g > 0.5 && g < 1.0)) throw RangeError("gamma_grid entries must lie in (0.5, 1)");
  if (gamma_grid.size() < 2) throw RangeError("gamma_grid needs at least two levels");
  if (!std::is_sorted(gamma_grid.begin(), gamma_grid.end())) throw RangeError("gamma_grid must be ascending");
  if (angles < 8) throw RangeError("angles must be at least 8");
  if (partitions < 1 || cost_partitions < 1) throw RangeError("partitions must be at least 1");
  if (!(gamma > 0.5 && gamma < 1.0)) throw RangeError("gamma must lie in (0.5, 1)");
  if (!(theta > 0.5 && theta < 1.0)) throw RangeError("theta must lie in (0.5, 1)");
  if (!(eps > 0.0)) throw RangeError("eps must be positive");
  if (max_iter < 1) throw RangeError("max_iter must be at least 1");
  if (cost_samples < cost_partitions + 1) throw RangeError("cost_samples must exceed cost_partitions");
  if (mc_grid < 1) throw RangeError("mc_grid must be at least 1");
  if (mc_scenarios < 1) throw RangeError("mc_scenarios must be at least 1");
  if (components < 0 || max_components < 1) throw RangeError("component counts must be positive");
  if (!(outside_margin >= 0.0)) throw RangeError("outside_margin must be nonnegative");
}

RunConfig parse_config(const Document& d, const ptr& at) {
  RunConfig c;
  if (!d.has(at)) return c;
  if (d.has(at / "gamma_grid")) c.gamma_grid = d.numbers(at / "gamma_grid");
  c.angles = d.integer_or(at / "angles", c.angles);
  c.partitions = d.integer_or(at / "partitions", c.partitions);
  c.outside_margin = d.number_or(at / "outside_margin", c.outside_margin);
  c.gamma = d.number_or(at / "gamma", c.gamma);
  c.theta = d.number_or(at / "theta", c.theta);
  c.eps = d.number_or(at / "eps", c.eps);
  c.max_iter = d.integer_or(at / "max_iter", c.max_iter);
  c.cost_samples = d.integer_or(at / "cost_samples", c.cost_samples);
  c.cost_partitions = d.integer_or(at / "cost_partitions", c.cost_partitions);
  c.mc_grid = d.integer_or(at / "mc_grid", c.mc_grid);
  c.mc_scenarios = d.integer_or(at / "mc_scenarios", c.mc_scenarios);
  if (d.has(at / "seed")) {
    const auto& v = d.at(at / "seed");
    if (!v.is_number_unsigned()) d.fail((at / "seed").to_string(), "expected a nonnegative integer");
    c.seed = v.get<std::uint64_t>();
  }
  if (d.has(at / "components")) {
    const auto& v = d.at(at / "components");
    if (v.is_string() && v.get<std::string>() == "auto")
      c.components = 0;
    else
      c.components = d.integer(at / "components");
  }
  c.max_components = d.integer_or(at / "max_components", c.max_components);
  wrap(d, at.to_string(), [&] {
    c.validate();
    return 0;
  });
  return c;
}

CaseBundle read_case(const std::string& path) {
  const auto d = Document::load(path);
  d.check_version();
  CaseBundle b;
  b.path = path;
  const fs::path dir = fs::path(path).parent_path();
  auto rel = [&](const char* key) { return (dir / d.string(ptr(std::string("/") + key))).lexically_normal().string(); };
  b.name = d.string_or(ptr("/name"), fs::path(path).stem().string());
  b.network_file = rel("network");
  b.fleet_file = rel("fleet");
  b.profiles_file = rel("profiles");
  if (d.has(ptr("/samples"))) b.samples_file = rel("samples");
  if (d.has(ptr("/gmm"))) b.gmm_file = rel("gmm");
  if (b.samples_file.empty() && b.gmm_file.empty()) d.fail("/samples", "need a samples file or a gmm file");
  b.config = parse_config(d, ptr("/config"));
  return b;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

SampleTable read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "", "cannot open file");
  SampleTable t;
  std::vector<std::vector<double>> rows;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (t.labels.empty()) {
      t.labels = cells;
      continue;
    }
    if (cells.size() != t.labels.size())
      throw ParseError(path, ln, "", "expected " + std::to_string(t.labels.size()) + " columns");
    std::vector<double> row;
    for (size_t c = 0; c < cells.size(); ++c) {
      try {
        size_t used = 0;
        row.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(path, ln, t.labels[c], "not a number: '" + cells[c] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (t.labels.empty()) throw ParseError(path, ln, "", "no header line");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.labels.size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c)
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

void write_samples_csv(const std::string& path, const SampleTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "# format_version=" << kFormatVersion << " units=p.u.\n";
  for (size_t c = 0; c < table.labels.size(); ++c) out << (c ? "," : "") << table.labels[c];
  out << "\n";
  char buf[32];
  for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, table.values(r, c));
      out << (c ? "," : "") << std::string_view(buf, static_cast<size_t>(res.ptr - buf));
    }
    out << "\n";
  }
}

json gmm_to_json(const uq::Gmm& g, const std::vector<std::string>& labels) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "gmm";
  j["units"] = "p.u.";
  j["labels"] = labels;
  j["components"] = json::array();
  for (int k = 0; k < g.size(); ++k) {
    json c;
    c["weight"] = g.weights[k];
    c["mean"] = std::vector<double>(g.means[k].data(), g.means[k].data() + g.means[k].size());
    json cov = json::array();
    for (Eigen::Index r = 0; r < g.covariances[k].rows(); ++r) {
      std::vector<double> row(g.covariances[k].cols());
      for (Eigen::Index c2 = 0; c2 < g.covariances[k].cols(); ++c2) row[c2] = g.covariances[k](r, c2);
      cov.push_back(row);
    }
    c["covariance"] = cov;
    j["components"].push_back(c);
  }
  return j;
}

uq::Gmm gmm_from_json(const Document& d, const ptr& at, std::vector<std::string>* labels) {
  uq::Gmm g;
  if (labels) {
    labels->clear();
    if (d.has(at / "labels"))
      for (size_t i = 0; i < d.array(at / "labels").size(); ++i) labels->push_back(d.string(at / "labels" / i));
  }
  const auto& jc = d.array(at / "components");
  if (jc.empty()) d.fail((at / "components").to_string(), "expected a nonempty array");
  for (size_t k = 0; k < jc.size(); ++k) {
    const ptr p = at / "components" / k;
    g.weights.push_back(d.number(p / "weight"));
    const auto mu = d.numbers(p / "mean");
    const Eigen::Index n = static_cast<Eigen::Index>(mu.size());
    g.means.push_back(Eigen::Map<const Eigen::VectorXd>(mu.data(), n));
    Eigen::MatrixXd cov(n, n);
    const auto& jv = d.at(p / "covariance");
    if (!jv.is_array() || static_cast<Eigen::Index>(jv.size()) != n)
      d.fail((p / "covariance").to_string(), "expected a square matrix matching the mean");
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto row = d.numbers(p / "covariance" / static_cast<size_t>(r));
      if (static_cast<Eigen::Index>(row.size()) != n)
        d.fail((p / "covariance" / static_cast<size_t>(r)).to_string(), "row length does not match");
      for (Eigen::Index c = 0; c < n; ++c) cov(r, c) = row[c];
    }
    g.covariances.push_back(std::move(cov));
  }
  wrap(d, at.to_string(), [&] {
    g.validate();
    return 0;
  });
  return g;
}

uq::EmResult fit_case_gmm(const SampleTable& table, const RunConfig& config) {
  uq::EmOptions o;
  o.seed = config.seed;
  if (config.components > 0) return uq::fit_em(table.values, config.components, o);
  return uq::fit_em_auto(table.values, config.max_components, o);
}

namespace {

// Columns of `values` reordered to `wanted`.
Eigen::MatrixXd reorder(const std::vector<std::string>& have, const Eigen::MatrixXd& values,
                        const std::vector<std::string>& wanted, const std::string& file) {
  Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(wanted.size()));
  for (size_t w = 0; w < wanted.size(); ++w) {
    const auto it = std::find(have.begin(), have.end(), wanted[w]);
    if (it == have.end()) throw ParseError(file, 1, wanted[w], "column missing for error label");
    out.col(static_cast<Eigen::Index>(w)) = values.col(it - have.begin());
  }
  return out;
}

}  // namespace

cc::VppModel load_model(const CaseBundle& b) {
  auto network = read_network(b.network_file);
  auto fl = read_fleet(b.fleet_file, network);
  auto pr = read_profiles(b.profiles_file, network);
  const fleet::ErrorLayout layout(fl, pr.loads);
  std::vector<std::string> wanted;
  for (int i = 0; i < layout.size(); ++i) wanted.push_back(layout.label(i));
  uq::Gmm g;
  if (!b.gmm_file.empty()) {
    const auto d = Document::load(b.gmm_file);
    d.check_version();
    std::vector<std::string> labels;
    g = gmm_from_json(d, ptr(""), &labels);
    if (labels != wanted) d.fail("/labels", "labels do not match the case's error layout");
  } else {
    const auto t = read_samples_csv(b.samples_file);
    SampleTable ordered{wanted, reorder(t.labels, t.values, wanted, b.samples_file)};
    g = fit_case_gmm(ordered, b.config).model;
  }
  return cc::build_vpp_model(std::move(network), std::move(fl), std::move(pr.loads), std::move(pr.forecast), {g},
                             pr.periods, pr.dt);
}

}  // namespace vppflex::io
