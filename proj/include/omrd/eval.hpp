#pragma once

#include <string>
#include <vector>

#include "omrd/tensor.hpp"

namespace omrd {

enum class WhichFeature { Oim, Trip };

std::string feature_name(WhichFeature f);
WhichFeature feature_from_name(const std::string& name);

struct EmbeddingSet {
  MatRM<float> vectors;  // [N x D]
  std::vector<int> identities;
  std::vector<int> cameras;
  WhichFeature which = WhichFeature::Oim;

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

// Evaluation worker count: OMRD_THREADS when set (>= 1), else the machine's
// core count. Results are bit-identical for any value.
int eval_threads();

// Entry (i, j) = ||q_i - g_j||_2, accumulated in double.
MatRM<double> pairwise_distances(const EmbeddingSet& queries, const EmbeddingSet& gallery, int threads = 0);

struct EvalReport {
  std::vector<double> cmc;  // ranks 1..max_rank
  double map = 0.0;
  std::vector<double> per_query_ap;  // valid queries, in query order
  int num_valid_queries = 0;
  int num_dropped_queries = 0;
  int max_rank = 10;
  WhichFeature which = WhichFeature::Oim;
};

// Single-query protocol: per query, gallery entries sharing both identity and
// camera are excluded; queries with no cross-camera match are dropped and
// counted. Distance ties break on the stable (identity, camera, index) key.
EvalReport evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery, int max_rank = 10,
                    int threads = 0);

std::string eval_report_json(const EvalReport& report);
std::string cmc_csv(const EvalReport& report);

// Shortest round-trip decimal form; deterministic across runs.
std::string format_double(double v);

}  // namespace omrd
