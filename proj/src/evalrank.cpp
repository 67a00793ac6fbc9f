#include "closenas/evalrank.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "closenas/compute/optim.hpp"
#include "closenas/score.hpp"

namespace closenas {

namespace {

void require_aligned(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("score vectors differ in length (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
}

std::vector<int> order_desc(std::span<const double> scores, std::span<const std::string> keys) {
  if (!keys.empty() && keys.size() != scores.size()) throw std::invalid_argument("tie-break keys misaligned");
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    if (!keys.empty()) return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
    return a < b;
  });
  return idx;
}

}  // namespace

double kendalls_tau(std::span<const double> estimated, std::span<const double> truth) {
  require_aligned(estimated, truth);
  const std::size_t n = estimated.size();
  if (n < 2) throw std::invalid_argument("Kendall's tau needs at least two architectures");
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double de = estimated[i] - estimated[j];
      const double dt = truth[i] - truth[j];
      const double prod = de * dt;
      if (prod > 0) ++concordant;
      else if (prod < 0) ++discordant;
    }
  }
  const double pairs = static_cast<double>(n) * (n - 1) / 2.0;
  return static_cast<double>(concordant - discordant) / pairs;
}

std::vector<int> top_indices(std::span<const double> scores, int count, std::span<const std::string> keys) {
  auto idx = order_desc(scores, keys);
  idx.resize(static_cast<std::size_t>(std::clamp(count, 0, static_cast<int>(idx.size()))));
  return idx;
}

double precision_at_topk(std::span<const double> estimated, std::span<const double> truth, double k_percent,
                         std::span<const std::string> keys) {
  require_aligned(estimated, truth);
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw std::invalid_argument("k_percent must lie in (0, 100]");
  if (estimated.empty()) throw std::invalid_argument("P@topK of an empty ranking");
  const int n = static_cast<int>(estimated.size());
  // Round away floating noise before the ceiling (e.g. 5 * 20 / 100).
  const double raw = k_percent * n / 100.0;
  const int k = std::max(1, static_cast<int>(std::ceil(raw - 1e-9)));
  auto te = top_indices(estimated, k, keys);
  auto tt = top_indices(truth, k, keys);
  std::sort(te.begin(), te.end());
  std::sort(tt.begin(), tt.end());
  std::vector<int> common;
  std::set_intersection(te.begin(), te.end(), tt.begin(), tt.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / k;
}

std::vector<int> ranks_of(std::span<const double> scores, std::span<const std::string> keys) {
  const auto idx = order_desc(scores, keys);
  std::vector<int> rank(scores.size());
  for (std::size_t r = 0; r < idx.size(); ++r) rank[static_cast<std::size_t>(idx[r])] = static_cast<int>(r);
  return rank;
}

RdGroups rd_by_complexity(std::span<const double> estimated, std::span<const double> truth,
                          std::span<const double> complexities, int groups, std::span<const std::string> keys) {
  require_aligned(estimated, truth);
  require_aligned(estimated, complexities);
  const int n = static_cast<int>(estimated.size());
  if (groups < 1) throw std::invalid_argument("need at least one group");
  if (n < groups) throw std::invalid_argument("fewer architectures than complexity groups");
  const auto est_rank = ranks_of(estimated, keys);
  const auto true_rank = ranks_of(truth, keys);
  std::vector<int> by_complexity(static_cast<std::size_t>(n));
  std::iota(by_complexity.begin(), by_complexity.end(), 0);
  std::stable_sort(by_complexity.begin(), by_complexity.end(), [&](int a, int b) {
    return complexities[static_cast<std::size_t>(a)] < complexities[static_cast<std::size_t>(b)];
  });
  RdGroups out;
  int pos = 0;
  for (int g = 0; g < groups; ++g) {
    const int size = n / groups + (g < n % groups ? 1 : 0);
    double sum = 0.0;
    double top = 0.0;
    for (int i = pos; i < pos + size; ++i) {
      const int a = by_complexity[static_cast<std::size_t>(i)];
      sum += true_rank[static_cast<std::size_t>(a)] - est_rank[static_cast<std::size_t>(a)];
      top = complexities[static_cast<std::size_t>(a)];
    }
    out.means.push_back(sum / size);
    out.sizes.push_back(size);
    out.max_complexity.push_back(top);
    pos += size;
  }
  return out;
}

std::string OracleRecipe::hash() const {
  std::ostringstream s;
  s.precision(17);
  s << "oracle/v1;epochs=" << epochs << ";batch=" << batch_size << ";lr=" << lr_max << "->" << lr_min
    << ";cosine;momentum=" << momentum << ";wd=" << weight_decay << ";clip=" << clip_norm << ";dropout=" << dropout
    << ";eval_batch=" << eval_batch;
  std::ostringstream hex;
  hex << std::hex << fnv1a64(s.str());
  return hex.str();
}

std::uint64_t oracle_seed(std::uint64_t master_seed, const CellArchitecture& arch) {
  return master_seed ^ fnv1a64(canonical_form(arch));
}

double train_standalone(const SearchSpaceSpec& spec, const CellArchitecture& arch, const OracleRecipe& recipe,
                        std::uint64_t seed, const SyntheticTask& task) {
  if (recipe.epochs < 1 || recipe.batch_size < 1) throw std::invalid_argument("invalid oracle recipe");
  StandaloneNet<float> net(spec, arch, seed, recipe.dropout);
  auto params = net.parameters();
  compute::SgdConfig sc;
  sc.lr = std::max(recipe.lr_max, 1e-8);
  sc.momentum = recipe.momentum;
  sc.weight_decay = recipe.weight_decay;
  compute::Sgd<float> opt(sc);
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  const int n = task.train.size();
  const int steps = std::max(1, n / recipe.batch_size);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<int> idx(static_cast<std::size_t>(recipe.batch_size));
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    opt.set_lr(compute::cosine_lr(epoch, recipe.epochs, recipe.lr_max, recipe.lr_min));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int s = 0; s < steps; ++s) {
      for (int i = 0; i < recipe.batch_size; ++i) {
        idx[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>((s * recipe.batch_size + i) % n)];
      }
      const auto y = task.train.labels(idx);
      Tape<float> tape;
      auto logits = net.forward(tape, task.train.images(idx), Mode::train, &rng);
      auto loss = compute::cross_entropy(logits, std::span<const int>(y));
      if (!std::isfinite(loss.value()[0])) {
        throw compute::DivergenceError("non-finite loss training " + arch.to_string() + " at epoch " +
                                       std::to_string(epoch + 1));
      }
      tape.backward(loss);
      compute::clip_grad_norm<float>(params, recipe.clip_norm);
      opt.step(params);
      for (auto* p : params) p->zero_grad();
    }
  }
  return evaluate_accuracy(net, task.val, recipe.eval_batch);
}

double GroundTruthTable::score(const std::string& arch) const {
  auto it = entries.find(arch);
  if (it == entries.end()) throw std::out_of_range("oracle has no entry for " + arch);
  return it->second.score;
}

std::string csv_quote(std::string_view field) {
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_row(std::string_view line) {
  std::vector<std::string> cols(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cols.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cols.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cols.emplace_back();
    } else if (c != '\r') {
      cols.back() += c;
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quote in CSV row");
  return cols;
}

void GroundTruthTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# format=closenas-oracle/v1\n";
  for (const auto& [k, v] : meta) out << "# " << k << "=" << v << "\n";
  out << "arch,score,seed,recipe_hash\n";
  const auto recipe = meta.count("recipe_hash") ? meta.at("recipe_hash") : std::string();
  char buf[64];
  for (const auto& [arch, e] : entries) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, e.score);
    out << csv_quote(arch) << "," << std::string(buf, end) << "," << e.seed << "," << recipe << "\n";
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

GroundTruthTable GroundTruthTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read oracle table " + path.string());
  GroundTruthTable t;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos || line.size() < 2) continue;
      t.meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (!header) {
      if (line != "arch,score,seed,recipe_hash") throw std::runtime_error(path.string() + ": unexpected header");
      header = true;
      continue;
    }
    const auto cols = split_csv_row(line);
    if (cols.size() != 4) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    Entry e;
    auto [p, ec] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), e.score);
    if (ec != std::errc()) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad score");
    e.seed = std::stoull(cols[2]);
    if (!t.entries.emplace(cols[0], e).second) {
      throw std::runtime_error(path.string() + ": duplicate architecture " + cols[0]);
    }
  }
  t.meta.erase("format");
  if (!header) throw std::runtime_error(path.string() + ": missing header");
  return t;
}

GroundTruthTable build_oracle_table(const SearchSpaceSpec& spec, const std::vector<CellArchitecture>& archs,
                                    const OracleRecipe& recipe, std::uint64_t master_seed, const SyntheticTask& task,
                                    const std::string& dataset_id, const OracleOptions& options) {
  // Group by isomorphism class, keeping first-appearance order.
  std::vector<CellArchitecture> reps;
  std::vector<std::vector<int>> members;
  std::map<std::string, int> class_of;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    validate(archs[i], spec);
    const auto key = canonical_form(archs[i]);
    auto [it, fresh] = class_of.emplace(key, static_cast<int>(reps.size()));
    if (fresh) {
      reps.push_back(canonical_representative(archs[i]));
      members.emplace_back();
    }
    members[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(i));
  }

  const int total = static_cast<int>(reps.size());
  std::vector<double> scores(reps.size(), -1.0);
  std::vector<char> finished(reps.size(), 0);
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::string failure;
  int done = 0;

  auto worker = [&] {
    while (!failed.load()) {
      const int c = next.fetch_add(1);
      if (c >= total) return;
      const auto& rep = reps[static_cast<std::size_t>(c)];
      try {
        const double s = train_standalone(spec, rep, recipe, oracle_seed(master_seed, rep), task);
        std::lock_guard lock(mu);
        scores[static_cast<std::size_t>(c)] = s;
        finished[static_cast<std::size_t>(c)] = 1;
        ++done;
        if (options.progress) options.progress(done, total);
      } catch (const compute::DivergenceError& e) {
        std::lock_guard lock(mu);
        if (!failed.exchange(true)) failure = e.what();
      }
    }
  };
  const int workers = std::clamp(options.workers, 1, std::max(1, total));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  GroundTruthTable table;
  table.meta["recipe_hash"] = recipe.hash();
  table.meta["dataset"] = dataset_id;
  table.meta["master_seed"] = std::to_string(master_seed);
  table.meta["classes"] = std::to_string(total);
  for (int c = 0; c < total; ++c) {
    if (!finished[static_cast<std::size_t>(c)]) continue;
    for (int i : members[static_cast<std::size_t>(c)]) {
      const auto& a = archs[static_cast<std::size_t>(i)];
      table.entries[a.to_string()] = {scores[static_cast<std::size_t>(c)], oracle_seed(master_seed, a)};
    }
  }
  if (failed) throw OracleError("oracle build aborted: " + failure, std::move(table));
  return table;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("KL: distributions differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-300));
  }
  return kl;
}

double kl_assignment_similarity(const CellArchitecture& a, const CellArchitecture& b, GateModel<float>& gate,
                                OpKind op_filter) {
  auto filtered = [&](const CellArchitecture& arch) {
    std::vector<std::vector<double>> out;
    const auto probs = gate.probabilities(arch);
    for (int e = 0; e < arch.num_edges(); ++e) {
      if (arch.op(e) != op_filter) continue;
      const auto& p = probs[static_cast<std::size_t>(e)];
      out.emplace_back(p.begin(), p.end());
    }
    return out;
  };
  const auto pa = filtered(a);
  const auto pb = filtered(b);
  if (pa.empty() || pb.empty()) {
    throw std::invalid_argument("both architectures need at least one '" + std::string(op_name(op_filter)) + "' edge");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < std::min(pa.size(), pb.size()); ++i) total += kl_divergence(pa[i], pb[i]);
  return total;
}

nlohmann::json RankingReport::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [k, v] : p_at_topk) p[std::to_string(k)] = v;
  return {{"kendalls_tau", kendalls_tau},
          {"p_at_topk", p},
          {"rd_by_group", rd_by_group},
          {"rd_group_sizes", rd_group_sizes},
          {"n_architectures", n_architectures}};
}

RankingReport make_report(const std::vector<CellArchitecture>& archs, std::span<const double> estimated,
                          const GroundTruthTable& truth, const SearchSpaceSpec& spec,
                          const std::vector<int>& k_percents) {
  if (archs.size() != estimated.size()) throw std::invalid_argument("estimates not aligned with architectures");
  std::vector<double> t, cx;
  std::vector<std::string> keys;
  for (const auto& a : archs) {
    keys.push_back(a.to_string());
    if (!truth.contains(keys.back())) throw std::invalid_argument("oracle lacks " + keys.back());
    t.push_back(truth.score(keys.back()));
    cx.push_back(complexity(a, spec));
  }
  RankingReport r;
  r.n_architectures = static_cast<int>(archs.size());
  r.kendalls_tau = kendalls_tau(estimated, t);
  for (int k : k_percents) r.p_at_topk[k] = precision_at_topk(estimated, t, k, keys);
  const auto rd = rd_by_complexity(estimated, t, cx, 5, keys);
  r.rd_by_group = rd.means;
  r.rd_group_sizes = rd.sizes;
  return r;
}

RankResult rank_all(Supernet<float>& net, const std::vector<CellArchitecture>& archs, const Dataset& val,
                    const GroundTruthTable& truth, int eval_batch, const std::vector<int>& k_percents) {
  for (const auto& a : archs) {
    if (!truth.contains(a.to_string())) throw std::invalid_argument("oracle and space disagree: no entry for " + a.to_string());
  }
  RankResult out;
  out.scores.reserve(archs.size());
  for (const auto& a : archs) out.scores.push_back(estimate_score(net, a, val, eval_batch));
  out.report = make_report(archs, out.scores, truth, net.config().spec, k_percents);
  return out;
}

}  // namespace closenas
