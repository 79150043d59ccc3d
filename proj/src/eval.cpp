#include "omrd/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <json.hpp>

namespace omrd {

std::string feature_name(WhichFeature f) { return f == WhichFeature::Oim ? "oim" : "trip"; }

WhichFeature feature_from_name(const std::string& name) {
  if (name == "oim") return WhichFeature::Oim;
  if (name == "trip") return WhichFeature::Trip;
  throw std::runtime_error("unknown feature name: " + name + " (expected oim or trip)");
}

int eval_threads() {
  if (const char* env = std::getenv("OMRD_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

// Fixed partition by index; worker count never changes per-item results.
void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) body(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace

MatRM<double> pairwise_distances(const EmbeddingSet& queries, const EmbeddingSet& gallery, int threads) {
  check(queries.dim() == gallery.dim(), "pairwise_distances: dimension mismatch " +
                                            std::to_string(queries.dim()) + " vs " +
                                            std::to_string(gallery.dim()));
  check(queries.size() >= 1 && gallery.size() >= 1, "pairwise_distances: empty embedding set");
  if (threads <= 0) threads = eval_threads();
  const int nq = queries.size(), ng = gallery.size(), d = queries.dim();
  MatRM<double> dist(nq, ng);
  parallel_for(nq, threads, [&](int i) {
    for (int j = 0; j < ng; ++j) {
      double acc = 0;
      for (int k = 0; k < d; ++k) {
        const double diff = static_cast<double>(queries.vectors(i, k)) - static_cast<double>(gallery.vectors(j, k));
        acc += diff * diff;
      }
      dist(i, j) = std::sqrt(acc);
    }
  });
  return dist;
}

EvalReport evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery, int max_rank, int threads) {
  check(max_rank >= 1, "evaluate: max_rank must be >= 1");
  check(queries.size() == static_cast<int>(queries.identities.size()) &&
            queries.size() == static_cast<int>(queries.cameras.size()),
        "evaluate: query metadata size mismatch");
  check(gallery.size() == static_cast<int>(gallery.identities.size()) &&
            gallery.size() == static_cast<int>(gallery.cameras.size()),
        "evaluate: gallery metadata size mismatch");
  check(queries.vectors.array().isFinite().all() && gallery.vectors.array().isFinite().all(),
        "evaluate: non-finite embedding entries");
  if (threads <= 0) threads = eval_threads();

  const MatRM<double> dist = pairwise_distances(queries, gallery, threads);
  const int nq = queries.size(), ng = gallery.size();

  struct QueryResult {
    bool valid = false;
    double ap = 0.0;
    int first_hit_rank = 0;  // 1-based
  };
  std::vector<QueryResult> results(static_cast<std::size_t>(nq));

  parallel_for(nq, threads, [&](int qi) {
    const int qid = queries.identities[static_cast<std::size_t>(qi)];
    const int qcam = queries.cameras[static_cast<std::size_t>(qi)];
    // sort key: distance, then the stable gallery key (identity, camera, index)
    struct Entry {
      double d;
      int id, cam, idx;
    };
    std::vector<Entry> order;
    order.reserve(static_cast<std::size_t>(ng));
    int num_relevant = 0;
    for (int gi = 0; gi < ng; ++gi) {
      const int gid = gallery.identities[static_cast<std::size_t>(gi)];
      const int gcam = gallery.cameras[static_cast<std::size_t>(gi)];
      if (gid == qid && gcam == qcam) continue;  // protocol filter
      order.push_back({dist(qi, gi), gid, gcam, gi});
      if (gid == qid) ++num_relevant;
    }
    if (num_relevant == 0) return;  // dropped query
    std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
      return std::tie(a.d, a.id, a.cam, a.idx) < std::tie(b.d, b.id, b.cam, b.idx);
    });
    double ap = 0.0;
    int hits = 0;
    int first_hit = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (order[k].id != qid) continue;
      ++hits;
      if (first_hit == 0) first_hit = static_cast<int>(k) + 1;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    QueryResult& r = results[static_cast<std::size_t>(qi)];
    r.valid = true;
    r.ap = ap / num_relevant;
    r.first_hit_rank = first_hit;
  });

  EvalReport report;
  report.max_rank = max_rank;
  report.which = queries.which;
  report.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);
  for (const QueryResult& r : results) {  // fixed reduction order
    if (!r.valid) {
      ++report.num_dropped_queries;
      continue;
    }
    ++report.num_valid_queries;
    report.per_query_ap.push_back(r.ap);
    for (int rank = r.first_hit_rank; rank <= max_rank; ++rank) {
      report.cmc[static_cast<std::size_t>(rank - 1)] += 1.0;
    }
  }
  if (report.num_valid_queries == 0) {
    throw std::runtime_error("evaluate: no valid queries (every query lacks a cross-camera match)");
  }
  double ap_sum = 0.0;
  for (double ap : report.per_query_ap) ap_sum += ap;
  report.map = ap_sum / report.num_valid_queries;
  for (double& c : report.cmc) c /= report.num_valid_queries;
  return report;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["feature"] = feature_name(report.which);
  j["max_rank"] = report.max_rank;
  j["map"] = report.map;
  j["cmc"] = report.cmc;
  j["per_query_ap"] = report.per_query_ap;
  j["num_valid_queries"] = report.num_valid_queries;
  j["num_dropped_queries"] = report.num_dropped_queries;
  return j.dump(2) + "\n";
}

std::string cmc_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "rank,cmc\n";
  for (int r = 1; r <= report.max_rank; ++r) {
    os << r << "," << format_double(report.cmc[static_cast<std::size_t>(r - 1)]) << "\n";
  }
  os << "map," << format_double(report.map) << "\n";
  return os.str();
}

}  // namespace omrd
