#include "opf/case_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace opf {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// MATPOWER-style case parsing
// ---------------------------------------------------------------------------

namespace {

// Extracts the rows of `mpc.<name> = [ ... ];` as vectors of doubles.
std::vector<std::vector<double>> read_matrix(const std::string& text,
                                             const std::string& name) {
  const std::string key = "mpc." + name;
  size_t pos = text.find(key);
  while (pos != std::string::npos) {
    size_t eq = text.find('=', pos + key.size());
    // Guard against matching a prefix (e.g. mpc.buses) or a comment.
    const char after = text[pos + key.size()];
    if (eq != std::string::npos && (std::isspace(after) || after == '=')) break;
    pos = text.find(key, pos + 1);
  }
  if (pos == std::string::npos) throw OpfError("missing matrix mpc." + name);
  const size_t open = text.find('[', pos);
  const size_t close = text.find(']', open);
  if (open == std::string::npos || close == std::string::npos) {
    throw OpfError("unterminated matrix mpc." + name);
  }

  std::vector<std::vector<double>> rows;
  std::string body = text.substr(open + 1, close - open - 1);
  std::stringstream lines(body);
  std::string line;
  while (std::getline(lines, line, ';')) {
    // Strip comments.
    if (const size_t c = line.find('%'); c != std::string::npos) line.resize(c);
    std::stringstream fields(line);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      try {
        size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw OpfError("malformed matrix row in mpc." + name + ": '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

double read_scalar(const std::string& text, const std::string& name) {
  const std::string key = "mpc." + name;
  const size_t pos = text.find(key);
  if (pos == std::string::npos) throw OpfError("missing scalar mpc." + name);
  const size_t eq = text.find('=', pos);
  const size_t end = text.find(';', eq);
  if (eq == std::string::npos || end == std::string::npos) {
    throw OpfError("malformed scalar mpc." + name);
  }
  return std::stod(text.substr(eq + 1, end - eq - 1));
}

constexpr double kDegToRad = kPi / 180.0;

// MATPOWER leaves angle-difference limits open when angmin = angmax = 0 or
// when they span +-360 degrees.
void set_angle_bounds(Branch& br, double angmin_deg, double angmax_deg) {
  if ((angmin_deg == 0.0 && angmax_deg == 0.0) ||
      (angmin_deg <= -360.0 && angmax_deg >= 360.0)) {
    br.angmin = -2.0 * kPi;
    br.angmax = 2.0 * kPi;
  } else {
    br.angmin = angmin_deg * kDegToRad;
    br.angmax = angmax_deg * kDegToRad;
  }
}

}  // namespace

Grid parse_case(const std::string& text) {
  Grid grid;
  grid.base_mva = read_scalar(text, "baseMVA");
  if (!(grid.base_mva > 0.0)) throw OpfError("baseMVA must be positive");
  const double base = grid.base_mva;

  const auto bus_rows = read_matrix(text, "bus");
  const auto gen_rows = read_matrix(text, "gen");
  const auto branch_rows = read_matrix(text, "branch");
  const auto cost_rows = read_matrix(text, "gencost");

  std::map<int, int> bus_index;  // external id -> position
  for (const auto& row : bus_rows) {
    if (row.size() < 13) throw OpfError("bus row needs 13 columns");
    Bus b;
    b.id = static_cast<int>(row[0]);
    const int t = static_cast<int>(row[1]);
    switch (t) {
      case 1: b.type = BusType::kPQ; break;
      case 2: b.type = BusType::kPV; break;
      case 3: b.type = BusType::kRef; break;
      case 4: b.type = BusType::kInactive; break;
      default: throw OpfError("unknown bus type " + std::to_string(t));
    }
    b.base_kv = row[9];
    b.vmax = row[11];
    b.vmin = row[12];
    bus_index[b.id] = grid.n_buses();
    grid.buses.push_back(b);

    if (b.type == BusType::kInactive) continue;
    const int pos = bus_index[b.id];
    if (row[2] != 0.0 || row[3] != 0.0) {
      grid.loads.push_back({grid.n_loads() + 1, pos, row[2] / base, row[3] / base});
    }
    if (row[4] != 0.0 || row[5] != 0.0) {
      grid.shunts.push_back({grid.n_shunts() + 1, pos, row[4] / base, row[5] / base});
    }
  }

  auto lookup_bus = [&](double id_raw) {
    const int id = static_cast<int>(id_raw);
    const auto it = bus_index.find(id);
    if (it == bus_index.end()) throw OpfError("unknown bus reference " + std::to_string(id));
    return it->second;
  };

  std::vector<size_t> kept_gen_rows;
  for (size_t i = 0; i < gen_rows.size(); ++i) {
    const auto& row = gen_rows[i];
    if (row.size() < 10) throw OpfError("gen row needs at least 10 columns");
    if (row[7] <= 0.0) continue;  // out of service
    const int pos = lookup_bus(row[0]);
    if (grid.buses[pos].type == BusType::kInactive) continue;
    Generator g;
    g.id = grid.n_generators() + 1;
    g.bus = pos;
    g.pg = row[1] / base;
    g.qg = row[2] / base;
    g.qmax = row[3] / base;
    g.qmin = row[4] / base;
    g.vg = row[5];
    g.mbase = row[6];
    g.pmax = row[8] / base;
    g.pmin = row[9] / base;
    kept_gen_rows.push_back(i);
    grid.generators.push_back(g);
  }

  // Polynomial costs only; rows beyond one per generator (reactive costs)
  // are ignored.
  if (cost_rows.size() < gen_rows.size()) throw OpfError("gencost rows missing");
  for (size_t k = 0; k < kept_gen_rows.size(); ++k) {
    const auto& row = cost_rows[kept_gen_rows[k]];
    if (row.size() < 4) throw OpfError("malformed gencost row");
    if (static_cast<int>(row[0]) != 2) throw OpfError("unsupported cost model (piecewise linear)");
    const int n = static_cast<int>(row[3]);
    if (n > 3) throw OpfError("unsupported cost model (degree > 2)");
    if (row.size() < 4 + static_cast<size_t>(n)) throw OpfError("malformed gencost row");
    double c2 = 0.0, c1 = 0.0, c0 = 0.0;
    if (n >= 1) c0 = row[3 + n];
    if (n >= 2) c1 = row[2 + n];
    if (n >= 3) c2 = row[1 + n];
    Generator& g = grid.generators[k];
    g.cost_squared = c2 * base * base;
    g.cost_linear = c1 * base;
    g.cost_offset = c0;
  }

  for (const auto& row : branch_rows) {
    if (row.size() < 13) throw OpfError("branch row needs 13 columns");
    if (row[10] == 0.0) continue;  // out of service
    Branch br;
    br.from = lookup_bus(row[0]);
    br.to = lookup_bus(row[1]);
    if (grid.buses[br.from].type == BusType::kInactive ||
        grid.buses[br.to].type == BusType::kInactive) {
      continue;
    }
    br.id = grid.n_branches() + 1;
    br.br_r = row[2];
    br.br_x = row[3];
    br.b_fr = row[4] / 2.0;
    br.b_to = row[4] / 2.0;
    br.rate_a = row[5] / base;
    br.rate_b = row[6] / base;
    br.rate_c = row[7] / base;
    const double ratio = row[8];
    const double shift_deg = row[9];
    if (ratio != 0.0 || shift_deg != 0.0) {
      br.kind = BranchKind::kTransformer;
      br.tap = ratio != 0.0 ? ratio : 1.0;
      br.shift = shift_deg * kDegToRad;
    }
    set_angle_bounds(br, row[11], row[12]);
    grid.branches.push_back(br);
  }

  validate_grid(grid);
  return grid;
}

Grid parse_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw OpfError("cannot open case file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

// ---------------------------------------------------------------------------
// Example records (one JSON object per line)
// ---------------------------------------------------------------------------

namespace {

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& a) {
  Vec v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

const char* bus_type_name(BusType t) {
  switch (t) {
    case BusType::kPQ: return "PQ";
    case BusType::kPV: return "PV";
    case BusType::kRef: return "REF";
    case BusType::kInactive: return "INACTIVE";
  }
  return "PQ";
}

BusType bus_type_from_name(const std::string& s) {
  if (s == "PQ") return BusType::kPQ;
  if (s == "PV") return BusType::kPV;
  if (s == "REF") return BusType::kRef;
  if (s == "INACTIVE") return BusType::kInactive;
  throw OpfError("unknown bus_type '" + s + "'");
}

json branch_to_json(const Grid& g, const Branch& br) {
  json j{{"id", br.id},
         {"from_bus", g.buses[br.from].id},
         {"to_bus", g.buses[br.to].id},
         {"angmin", br.angmin},
         {"angmax", br.angmax},
         {"b_fr", br.b_fr},
         {"b_to", br.b_to},
         {"br_r", br.br_r},
         {"br_x", br.br_x},
         {"rate_a", br.rate_a},
         {"rate_b", br.rate_b},
         {"rate_c", br.rate_c}};
  if (br.kind == BranchKind::kTransformer) {
    j["tap"] = br.tap;
    j["shift"] = br.shift;
  }
  return j;
}

Branch branch_from_json(const json& j, const std::map<int, int>& bus_index,
                        BranchKind kind) {
  Branch br;
  br.id = j.at("id").get<int>();
  br.from = bus_index.at(j.at("from_bus").get<int>());
  br.to = bus_index.at(j.at("to_bus").get<int>());
  br.kind = kind;
  br.angmin = j.at("angmin").get<double>();
  br.angmax = j.at("angmax").get<double>();
  br.b_fr = j.at("b_fr").get<double>();
  br.b_to = j.at("b_to").get<double>();
  br.br_r = j.at("br_r").get<double>();
  br.br_x = j.at("br_x").get<double>();
  br.rate_a = j.at("rate_a").get<double>();
  br.rate_b = j.at("rate_b").get<double>();
  br.rate_c = j.at("rate_c").get<double>();
  if (kind == BranchKind::kTransformer) {
    br.tap = j.at("tap").get<double>();
    br.shift = j.at("shift").get<double>();
  }
  return br;
}

}  // namespace

std::string write_example(const Example& ex) {
  const Grid& g = ex.grid;
  json grid_j;
  grid_j["context"] = {{"base_mva", g.base_mva}};

  grid_j["buses"] = json::array();
  for (const Bus& b : g.buses) {
    grid_j["buses"].push_back({{"id", b.id},
                               {"base_kv", b.base_kv},
                               {"bus_type", bus_type_name(b.type)},
                               {"vmin", b.vmin},
                               {"vmax", b.vmax}});
  }
  grid_j["generators"] = json::array();
  for (const Generator& gen : g.generators) {
    grid_j["generators"].push_back({{"id", gen.id},
                                    {"bus_id", g.buses[gen.bus].id},
                                    {"mbase", gen.mbase},
                                    {"pg", gen.pg},
                                    {"pmin", gen.pmin},
                                    {"pmax", gen.pmax},
                                    {"qg", gen.qg},
                                    {"qmin", gen.qmin},
                                    {"qmax", gen.qmax},
                                    {"vg", gen.vg},
                                    {"cost_squared", gen.cost_squared},
                                    {"cost_linear", gen.cost_linear},
                                    {"cost_offset", gen.cost_offset}});
  }
  grid_j["loads"] = json::array();
  for (const Load& l : g.loads) {
    grid_j["loads"].push_back(
        {{"id", l.id}, {"bus_id", g.buses[l.bus].id}, {"pd", l.pd}, {"qd", l.qd}});
  }
  grid_j["shunts"] = json::array();
  for (const Shunt& s : g.shunts) {
    grid_j["shunts"].push_back(
        {{"id", s.id}, {"bus_id", g.buses[s.bus].id}, {"bs", s.bs}, {"gs", s.gs}});
  }
  grid_j["ac_lines"] = json::array();
  grid_j["transformers"] = json::array();
  for (const Branch& br : g.branches) {
    if (br.kind == BranchKind::kTransformer) {
      grid_j["transformers"].push_back(branch_to_json(g, br));
    } else {
      grid_j["ac_lines"].push_back(branch_to_json(g, br));
    }
  }

  json meta_j;
  meta_j["source_case"] = ex.meta.source_case;
  switch (ex.meta.perturbation) {
    case Perturbation::kNone: meta_j["perturbation"] = "NONE"; break;
    case Perturbation::kLoadOnly: meta_j["perturbation"] = "LOAD_ONLY"; break;
    case Perturbation::kLoadAndDrop: meta_j["perturbation"] = "LOAD_AND_DROP"; break;
  }
  if (ex.meta.dropped) {
    meta_j["dropped"] = {{"kind", ex.meta.dropped->kind}, {"id", ex.meta.dropped->id}};
  }
  meta_j["seed"] = ex.meta.seed;

  json root;
  root["meta"] = meta_j;
  root["grid"] = grid_j;
  if (ex.solution) {
    const OpfSolution& s = *ex.solution;
    json sol_j;
    sol_j["va"] = vec_to_json(s.va);
    sol_j["vm"] = vec_to_json(s.vm);
    sol_j["pg"] = vec_to_json(s.pg);
    sol_j["qg"] = vec_to_json(s.qg);
    sol_j["pf"] = vec_to_json(s.pf);
    sol_j["qf"] = vec_to_json(s.qf);
    sol_j["pt"] = vec_to_json(s.pt);
    sol_j["qt"] = vec_to_json(s.qt);
    root["solution"] = sol_j;
  }
  return root.dump();
}

Example read_example(const std::string& line) {
  const json root = json::parse(line);
  Example ex;
  const json& grid_j = root.at("grid");
  Grid& g = ex.grid;
  g.base_mva = grid_j.at("context").at("base_mva").get<double>();

  std::map<int, int> bus_index;
  for (const json& bj : grid_j.at("buses")) {
    Bus b;
    b.id = bj.at("id").get<int>();
    b.base_kv = bj.at("base_kv").get<double>();
    b.type = bus_type_from_name(bj.at("bus_type").get<std::string>());
    b.vmin = bj.at("vmin").get<double>();
    b.vmax = bj.at("vmax").get<double>();
    bus_index[b.id] = g.n_buses();
    g.buses.push_back(b);
  }
  for (const json& gj : grid_j.at("generators")) {
    Generator gen;
    gen.id = gj.at("id").get<int>();
    gen.bus = bus_index.at(gj.at("bus_id").get<int>());
    gen.mbase = gj.at("mbase").get<double>();
    gen.pg = gj.at("pg").get<double>();
    gen.pmin = gj.at("pmin").get<double>();
    gen.pmax = gj.at("pmax").get<double>();
    gen.qg = gj.at("qg").get<double>();
    gen.qmin = gj.at("qmin").get<double>();
    gen.qmax = gj.at("qmax").get<double>();
    gen.vg = gj.at("vg").get<double>();
    gen.cost_squared = gj.at("cost_squared").get<double>();
    gen.cost_linear = gj.at("cost_linear").get<double>();
    gen.cost_offset = gj.at("cost_offset").get<double>();
    g.generators.push_back(gen);
  }
  for (const json& lj : grid_j.at("loads")) {
    g.loads.push_back({lj.at("id").get<int>(), bus_index.at(lj.at("bus_id").get<int>()),
                       lj.at("pd").get<double>(), lj.at("qd").get<double>()});
  }
  for (const json& sj : grid_j.at("shunts")) {
    g.shunts.push_back({sj.at("id").get<int>(), bus_index.at(sj.at("bus_id").get<int>()),
                        sj.at("gs").get<double>(), sj.at("bs").get<double>()});
  }
  std::vector<Branch> branches;
  for (const json& bj : grid_j.at("ac_lines")) {
    branches.push_back(branch_from_json(bj, bus_index, BranchKind::kAcLine));
  }
  for (const json& bj : grid_j.at("transformers")) {
    branches.push_back(branch_from_json(bj, bus_index, BranchKind::kTransformer));
  }
  // Restore original interleaved branch order by id.
  std::sort(branches.begin(), branches.end(),
            [](const Branch& a, const Branch& b) { return a.id < b.id; });
  g.branches = std::move(branches);

  const json& meta_j = root.at("meta");
  ex.meta.source_case = meta_j.at("source_case").get<std::string>();
  const std::string pert = meta_j.at("perturbation").get<std::string>();
  if (pert == "NONE") {
    ex.meta.perturbation = Perturbation::kNone;
  } else if (pert == "LOAD_ONLY") {
    ex.meta.perturbation = Perturbation::kLoadOnly;
  } else if (pert == "LOAD_AND_DROP") {
    ex.meta.perturbation = Perturbation::kLoadAndDrop;
  } else {
    throw OpfError("unknown perturbation '" + pert + "'");
  }
  if (meta_j.contains("dropped")) {
    ex.meta.dropped = DroppedComponent{meta_j["dropped"].at("kind").get<std::string>(),
                                       meta_j["dropped"].at("id").get<int>()};
  }
  if (ex.meta.perturbation == Perturbation::kLoadAndDrop && !ex.meta.dropped) {
    throw OpfError("LOAD_AND_DROP example without dropped component");
  }
  ex.meta.seed = meta_j.at("seed").get<std::uint64_t>();

  if (root.contains("solution")) {
    const json& sol_j = root.at("solution");
    OpfSolution s;
    s.va = vec_from_json(sol_j.at("va"));
    s.vm = vec_from_json(sol_j.at("vm"));
    s.pg = vec_from_json(sol_j.at("pg"));
    s.qg = vec_from_json(sol_j.at("qg"));
    s.pf = vec_from_json(sol_j.at("pf"));
    s.qf = vec_from_json(sol_j.at("qf"));
    s.pt = vec_from_json(sol_j.at("pt"));
    s.qt = vec_from_json(sol_j.at("qt"));
    if (!s.shape_matches(g)) throw OpfError("solution arrays do not match grid element counts");
    ex.solution = std::move(s);
  }
  return ex;
}

std::vector<Example> read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw OpfError("cannot open dataset file " + path);
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(read_example(line));
    } catch (const std::exception& e) {
      throw OpfError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset_file(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw OpfError("cannot write dataset file " + path);
  for (const Example& ex : examples) out << write_example(ex) << '\n';
}

// ---------------------------------------------------------------------------
// Standardization stats
// ---------------------------------------------------------------------------

namespace {

json stats_block(const FeatureStats& s) {
  return {{"mean", vec_to_json(s.mean)}, {"std", vec_to_json(s.std)}};
}

FeatureStats stats_block_from(const json& j) {
  return {vec_from_json(j.at("mean")), vec_from_json(j.at("std"))};
}

}  // namespace

void save_stats(const std::string& path, const StandardizationStats& stats) {
  json j;
  j["bus"] = stats_block(stats.bus);
  j["generator"] = stats_block(stats.gen);
  j["load"] = stats_block(stats.load);
  j["shunt"] = stats_block(stats.shunt);
  j["ac_line"] = stats_block(stats.line);
  j["transformer"] = stats_block(stats.xfmr);
  j["sol_bus"] = stats_block(stats.sol_bus);
  j["sol_generator"] = stats_block(stats.sol_gen);
  j["sol_ac_line"] = stats_block(stats.sol_line);
  j["sol_transformer"] = stats_block(stats.sol_xfmr);
  std::ofstream out(path);
  if (!out) throw OpfError("cannot write stats file " + path);
  out << j.dump(2) << '\n';
}

StandardizationStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw OpfError("cannot open stats file " + path);
  json j;
  in >> j;
  StandardizationStats s;
  s.bus = stats_block_from(j.at("bus"));
  s.gen = stats_block_from(j.at("generator"));
  s.load = stats_block_from(j.at("load"));
  s.shunt = stats_block_from(j.at("shunt"));
  s.line = stats_block_from(j.at("ac_line"));
  s.xfmr = stats_block_from(j.at("transformer"));
  s.sol_bus = stats_block_from(j.at("sol_bus"));
  s.sol_gen = stats_block_from(j.at("sol_generator"));
  s.sol_line = stats_block_from(j.at("sol_ac_line"));
  s.sol_xfmr = stats_block_from(j.at("sol_transformer"));
  return s;
}

// ---------------------------------------------------------------------------
// Tensor bundle (binary, versioned)
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'P', 'F', 'B', 'N', 'D', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw OpfError("truncated bundle");
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw OpfError("truncated bundle");
  return v;
}

std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw OpfError("truncated bundle");
  return s;
}

}  // namespace

void save_bundle(const std::string& path, const TensorBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OpfError("cannot write bundle " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u64(out, bundle.tensors.size());
  for (const auto& [name, m] : bundle.tensors) {
    write_string(out, name);
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  write_u64(out, bundle.scalars.size());
  for (const auto& [name, v] : bundle.scalars) {
    write_string(out, name);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  write_u64(out, bundle.strings.size());
  for (const auto& [name, v] : bundle.strings) {
    write_string(out, name);
    write_string(out, v);
  }
  if (!out) throw OpfError("write failure on bundle " + path);
}

TensorBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OpfError("cannot open bundle " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw OpfError("not a tensor bundle: " + path);
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw OpfError("bundle version mismatch: file has " + std::to_string(version) +
                   ", expected " + std::to_string(kVersion));
  }
  TensorBundle b;
  const std::uint64_t nt = read_u64(in);
  for (std::uint64_t i = 0; i < nt; ++i) {
    const std::string name = read_string(in);
    const auto rows = static_cast<Eigen::Index>(read_u64(in));
    const auto cols = static_cast<Eigen::Index>(read_u64(in));
    Mat m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * m.size()))) {
      throw OpfError("truncated bundle");
    }
    b.tensors.emplace(name, std::move(m));
  }
  const std::uint64_t ns = read_u64(in);
  for (std::uint64_t i = 0; i < ns; ++i) {
    const std::string name = read_string(in);
    double v = 0.0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw OpfError("truncated bundle");
    b.scalars.emplace(name, v);
  }
  const std::uint64_t nstr = read_u64(in);
  for (std::uint64_t i = 0; i < nstr; ++i) {
    const std::string name = read_string(in);
    b.strings.emplace(name, read_string(in));
  }
  return b;
}

}  // namespace opf
