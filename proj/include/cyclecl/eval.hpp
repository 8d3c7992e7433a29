#pragma once

// Frozen-representation evaluation: per-frame embedding tables, a linear
// probe, and k-NN retrieval scored by class hits among the top k.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cyclecl/checkpoint.hpp"
#include "cyclecl/synthetic_videos.hpp"

namespace cyclecl {

enum class EmbeddingSpace { kBackbone, kVideoHead, kCycleHead };

EmbeddingSpace parse_embedding_space(const std::string& s);
const char* to_string(EmbeddingSpace s);

// Identifies one frame. `source` is the generating seed of the dataset, so
// frames of two different datasets never compare equal.
struct SampleId {
  std::uint64_t source = 0;
  std::uint32_t video = 0;
  std::uint32_t frame = 0;

  auto operator<=>(const SampleId&) const = default;
};

struct EmbeddingTable {
  MatrixF rows;  // unit rows, N x d
  std::vector<int> labels;
  std::vector<SampleId> ids;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

// Embeds every frame (no augmentation) with the query network.
EmbeddingTable embed_dataset(const Encoder<float>& encoder, const VideoDataset& data,
                             const ClassLabels& labels, EmbeddingSpace space);

// Same, loading the network from a checkpoint; the checkpoint's input shape
// must match the dataset's frames.
EmbeddingTable embed_dataset(const Checkpoint& ckpt, const VideoDataset& data,
                             const ClassLabels& labels, EmbeddingSpace space);

// One row per video: mean of its frame embeddings, renormalized. The id keeps
// the video and sets frame to 0.
EmbeddingTable video_level_table(const EmbeddingTable& frames);

struct ProbeOptions {
  int epochs = 200;  // full-batch gradient steps
  double lr = 0.1;
};

// Multinomial logistic regression on frozen embeddings, trained by full-batch
// gradient descent from zero weights. Returns test top-1 accuracy; argmax
// ties go to the lowest class index.
double linear_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                    const ProbeOptions& opts = {});

struct RetrievalResult {
  std::vector<int> ks;
  std::vector<double> hit_rates;       // one per k
  std::vector<int> first_hit_rank;     // per query, 1-based; 0 when no hit in the gallery
};

// Ranks the gallery by cosine similarity (descending, ties to the lower
// sample id), skipping the gallery row with the query's own sample id. A
// query scores a hit at k when its class appears among the top-k classes.
RetrievalResult knn_retrieval(const EmbeddingTable& query, const EmbeddingTable& gallery,
                              std::span<const int> ks);

// Labeled key-value results text, e.g. "hit_rate@5 = 0.8125".
struct EvalReport {
  std::string mode;
  std::string space;
  std::optional<double> probe_accuracy;
  std::optional<RetrievalResult> retrieval;
  std::size_t num_queries = 0;
};

std::string format_report(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);

// query_index,video,frame,label,first_hit_rank
void write_ranks_csv(const EmbeddingTable& query, const RetrievalResult& result,
                     const std::filesystem::path& path);

}  // namespace cyclecl
