#include "opf/datagen.hpp"

#include <atomic>
#include <filesystem>
#include <thread>

namespace opf {

Grid perturb_loads(const Grid& grid, Rng& rng, double fraction) {
  Grid out = grid;
  for (Load& l : out.loads) {
    l.pd *= 1.0 + rng.uniform(-fraction, fraction);
    l.qd *= 1.0 + rng.uniform(-fraction, fraction);
  }
  return out;
}

namespace {

Grid without_generator(const Grid& grid, int gen_idx) {
  Grid out = grid;
  out.generators.erase(out.generators.begin() + gen_idx);
  return out;
}

Grid without_branch(const Grid& grid, int branch_idx) {
  Grid out = grid;
  out.branches.erase(out.branches.begin() + branch_idx);
  return out;
}

}  // namespace

std::pair<Grid, DroppedComponent> drop_component(const Grid& grid, Rng& rng) {
  std::vector<int> eligible_gens;
  for (int g = 0; g < grid.n_generators(); ++g) {
    if (grid.buses[grid.generators[g].bus].type != BusType::kRef) {
      eligible_gens.push_back(g);
    }
  }
  std::vector<int> eligible_branches;
  for (int b = 0; b < grid.n_branches(); ++b) eligible_branches.push_back(b);

  bool pick_gen = rng.coin();
  if (pick_gen && eligible_gens.empty()) pick_gen = false;
  if (!pick_gen && eligible_branches.empty()) {
    if (eligible_gens.empty()) throw OpfError("no eligible component to drop");
    pick_gen = true;
  }

  if (pick_gen) {
    const int g = eligible_gens[rng.uniform_int(eligible_gens.size())];
    return {without_generator(grid, g), {"generator", grid.generators[g].id}};
  }

  // Rejection loop: resample while the removal disconnects the grid.
  constexpr int kMaxResamples = 1000;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    const int b = eligible_branches[rng.uniform_int(eligible_branches.size())];
    Grid candidate = without_branch(grid, b);
    if (is_connected(candidate)) {
      return {std::move(candidate), {"branch", grid.branches[b].id}};
    }
  }
  // Every sampled branch was a bridge; drop a generator if possible.
  if (!eligible_gens.empty()) {
    const int g = eligible_gens[rng.uniform_int(eligible_gens.size())];
    return {without_generator(grid, g), {"generator", grid.generators[g].id}};
  }
  throw OpfError("no droppable component keeps the grid connected");
}

DatagenOutput generate_dataset(const DatagenConfig& config, const std::string& out_dir,
                               const Labeler& labeler, int threads) {
  if (std::abs(config.split_train + config.split_val + config.split_test - 1.0) > 1e-9) {
    throw OpfError("split fractions must sum to 1");
  }
  if (config.drop_probability < 0.0 || config.drop_probability > 1.0) {
    throw OpfError("drop probability must be in [0, 1]");
  }
  const Grid base = parse_case_file(config.base_case);
  const std::string case_name =
      std::filesystem::path(config.base_case).stem().string();

  const int n = config.n_examples;
  std::vector<Example> examples(n);
  std::vector<char> failed(n, 0);
  std::atomic<int> next{0};

  auto make_one = [&](int i) {
    Rng rng = Rng::child(config.seed, static_cast<std::uint64_t>(i));
    Example ex;
    ex.meta.source_case = case_name;
    ex.meta.seed = config.seed;

    Grid g = perturb_loads(base, rng, config.load_perturbation_fraction);
    ex.meta.perturbation = Perturbation::kLoadOnly;
    if (config.kind == DatasetKind::kTopDrop &&
        rng.uniform() < config.drop_probability) {
      auto [dropped_grid, dropped] = drop_component(g, rng);
      g = std::move(dropped_grid);
      ex.meta.perturbation = Perturbation::kLoadAndDrop;
      ex.meta.dropped = dropped;
    }
    ex.grid = std::move(g);
    if (labeler) {
      auto sol = labeler(ex.grid, config.seed + static_cast<std::uint64_t>(i));
      if (sol) {
        ex.solution = std::move(*sol);
      } else {
        failed[i] = 1;
      }
    }
    examples[i] = std::move(ex);
  };

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) make_one(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) make_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  DatagenOutput out;
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    if (failed[i]) {
      ++out.n_label_failures;
      continue;
    }
    if (examples[i].meta.perturbation == Perturbation::kLoadAndDrop) {
      ++out.n_dropped_topology;
    }
    kept.push_back(i);
  }
  if (labeler && n > 0 &&
      static_cast<double>(out.n_label_failures) / n > config.max_label_failure_rate) {
    throw OpfError("labeler failure rate " + std::to_string(out.n_label_failures) + "/" +
                   std::to_string(n) + " exceeds the configured cap");
  }

  // Deterministic split by a seeded shuffle of the kept indices.
  std::vector<int> order = kept;
  Rng split_rng = Rng::child(config.seed, 0x5917);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    std::swap(order[i], order[split_rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  }
  const int total = static_cast<int>(order.size());
  const int n_train = static_cast<int>(std::llround(config.split_train * total));
  const int n_val = static_cast<int>(std::llround(config.split_val * total));

  std::filesystem::create_directories(out_dir);
  auto collect = [&](int lo, int hi) {
    std::vector<Example> split;
    std::vector<int> ids(order.begin() + lo, order.begin() + hi);
    std::sort(ids.begin(), ids.end());  // files are written in index order
    for (int i : ids) split.push_back(examples[i]);
    return split;
  };
  const std::vector<Example> train = collect(0, n_train);
  const std::vector<Example> val = collect(n_train, std::min(total, n_train + n_val));
  const std::vector<Example> test = collect(std::min(total, n_train + n_val), total);
  write_dataset_file(out_dir + "/train.jsonl", train);
  write_dataset_file(out_dir + "/val.jsonl", val);
  write_dataset_file(out_dir + "/test.jsonl", test);
  if (labeler) save_stats(out_dir + "/stats.json", compute_stats(train));

  out.n_written = total;
  return out;
}

namespace {

struct Accumulator {
  Vec sum, sum_sq;
  std::int64_t count = 0;
  void init(int dim) {
    sum = Vec::Zero(dim);
    sum_sq = Vec::Zero(dim);
  }
  void add(const Vec& x) {
    sum += x;
    sum_sq += x.cwiseAbs2();
    ++count;
  }
  FeatureStats finish() const {
    FeatureStats fs;
    if (count == 0) {
      fs.mean = Vec::Zero(sum.size());
      fs.std = Vec::Ones(sum.size());
      return fs;
    }
    fs.mean = sum / static_cast<double>(count);
    Vec var = sum_sq / static_cast<double>(count) - fs.mean.cwiseAbs2();
    fs.std = var.cwiseMax(0.0).cwiseSqrt();
    for (int i = 0; i < fs.std.size(); ++i) {
      if (fs.std[i] < 1e-12) fs.std[i] = 1.0;  // constant features pass through
    }
    return fs;
  }
};

}  // namespace

StandardizationStats compute_stats(const std::vector<Example>& examples) {
  Accumulator bus, gen, load, shunt, line, xfmr;
  Accumulator sol_bus, sol_gen, sol_line, sol_xfmr;
  bus.init(kBusFeatDim);
  gen.init(kGenFeatDim);
  load.init(kLoadFeatDim);
  shunt.init(kShuntFeatDim);
  line.init(kLineFeatDim);
  xfmr.init(kXfmrFeatDim);
  sol_bus.init(2);
  sol_gen.init(2);
  sol_line.init(4);
  sol_xfmr.init(4);

  for (const Example& ex : examples) {
    const Grid& g = ex.grid;
    for (int i = 0; i < g.n_buses(); ++i) {
      if (!g.bus_active(i)) continue;
      bus.add(raw_bus_features(g.buses[i]));
      if (ex.solution) {
        Vec s(2);
        s << ex.solution->va[i], ex.solution->vm[i];
        sol_bus.add(s);
      }
    }
    for (int k = 0; k < g.n_generators(); ++k) {
      if (!g.bus_active(g.generators[k].bus)) continue;
      gen.add(raw_gen_features(g.generators[k]));
      if (ex.solution) {
        Vec s(2);
        s << ex.solution->pg[k], ex.solution->qg[k];
        sol_gen.add(s);
      }
    }
    for (const Load& l : g.loads) {
      if (g.bus_active(l.bus)) load.add(raw_load_features(l));
    }
    for (const Shunt& s : g.shunts) {
      if (g.bus_active(s.bus)) shunt.add(raw_shunt_features(s));
    }
    for (int b = 0; b < g.n_branches(); ++b) {
      const Branch& br = g.branches[b];
      if (!g.branch_active(br)) continue;
      const bool xf = br.kind == BranchKind::kTransformer;
      (xf ? xfmr : line).add(raw_branch_features(br));
      if (ex.solution) {
        Vec s(4);
        s << ex.solution->pt[b], ex.solution->qt[b], ex.solution->pf[b],
            ex.solution->qf[b];
        (xf ? sol_xfmr : sol_line).add(s);
      }
    }
  }

  StandardizationStats out;
  out.bus = bus.finish();
  out.gen = gen.finish();
  out.load = load.finish();
  out.shunt = shunt.finish();
  out.line = line.finish();
  out.xfmr = xfmr.finish();
  out.sol_bus = sol_bus.finish();
  out.sol_gen = sol_gen.finish();
  out.sol_line = sol_line.finish();
  out.sol_xfmr = sol_xfmr.finish();
  return out;
}

}  // namespace opf
