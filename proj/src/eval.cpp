#include "cyclecl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <tuple>

#include "cyclecl/errors.hpp"

namespace cyclecl {

EmbeddingSpace parse_embedding_space(const std::string& s) {
  if (s == "backbone") return EmbeddingSpace::kBackbone;
  if (s == "video_head") return EmbeddingSpace::kVideoHead;
  if (s == "cycle_head") return EmbeddingSpace::kCycleHead;
  throw ParameterError("unknown embedding space '" + s + "' (backbone|video_head|cycle_head)");
}

const char* to_string(EmbeddingSpace s) {
  switch (s) {
    case EmbeddingSpace::kBackbone: return "backbone";
    case EmbeddingSpace::kVideoHead: return "video_head";
    case EmbeddingSpace::kCycleHead: return "cycle_head";
  }
  return "?";
}

void EmbeddingTable::validate() const {
  if (static_cast<std::size_t>(rows.rows()) != labels.size() || labels.size() != ids.size()) {
    throw DimensionError("embedding table: " + std::to_string(rows.rows()) + " rows, " +
                         std::to_string(labels.size()) + " labels, " + std::to_string(ids.size()) +
                         " ids");
  }
}

EmbeddingTable embed_dataset(const Encoder<float>& encoder, const VideoDataset& data,
                             const ClassLabels& labels, EmbeddingSpace space) {
  if (encoder.params.layers.empty()) throw ConfigError("embed_dataset: encoder has no layers");
  const auto in = static_cast<std::size_t>(encoder.params.layers.front().weight.rows());
  if (in != data.frame_size()) {
    throw ConfigError("checkpoint expects " + std::to_string(in) + " pixels per frame, dataset has " +
                      std::to_string(data.height) + "x" + std::to_string(data.width));
  }
  if (labels.labels.size() != data.num_videos) {
    throw ConfigError("label count " + std::to_string(labels.labels.size()) +
                      " does not match video count " + std::to_string(data.num_videos));
  }
  const auto n = static_cast<Eigen::Index>(data.num_videos) * data.frames_per_video;
  MatrixF frames(n, static_cast<Eigen::Index>(in));
  EmbeddingTable t;
  t.labels.reserve(static_cast<std::size_t>(n));
  t.ids.reserve(static_cast<std::size_t>(n));
  Eigen::Index r = 0;
  for (std::uint32_t v = 0; v < data.num_videos; ++v) {
    for (std::uint32_t f = 0; f < data.frames_per_video; ++f, ++r) {
      frames.row(r) = data.frame(v, f);
      t.labels.push_back(labels.labels[v]);
      t.ids.push_back({data.seed, v, f});
    }
  }
  auto enc = encode(encoder, frames);
  switch (space) {
    case EmbeddingSpace::kBackbone: t.rows = detail::normalize_rows<float>(enc.backbone); break;
    case EmbeddingSpace::kVideoHead: t.rows = std::move(enc.z_video); break;
    case EmbeddingSpace::kCycleHead: t.rows = std::move(enc.z_cycle); break;
  }
  return t;
}

EmbeddingTable embed_dataset(const Checkpoint& ckpt, const VideoDataset& data,
                             const ClassLabels& labels, EmbeddingSpace space) {
  if (static_cast<std::uint32_t>(ckpt.config.input_height) != data.height ||
      static_cast<std::uint32_t>(ckpt.config.input_width) != data.width) {
    throw ConfigError("checkpoint input " + std::to_string(ckpt.config.input_height) + "x" +
                      std::to_string(ckpt.config.input_width) + " does not match dataset frames " +
                      std::to_string(data.height) + "x" + std::to_string(data.width));
  }
  return embed_dataset(ckpt.nets.query, data, labels, space);
}

EmbeddingTable video_level_table(const EmbeddingTable& frames) {
  frames.validate();
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = frames.ids[a];
    const auto& y = frames.ids[b];
    return std::tie(x.source, x.video) < std::tie(y.source, y.video);
  });
  EmbeddingTable out;
  MatrixF sums(0, frames.rows.cols());
  for (std::size_t i = 0; i < order.size();) {
    const auto& id = frames.ids[order[i]];
    Eigen::RowVectorXf acc = Eigen::RowVectorXf::Zero(frames.rows.cols());
    std::size_t j = i;
    for (; j < order.size() && frames.ids[order[j]].source == id.source &&
           frames.ids[order[j]].video == id.video;
         ++j) {
      acc += frames.rows.row(static_cast<Eigen::Index>(order[j]));
    }
    sums.conservativeResize(sums.rows() + 1, Eigen::NoChange);
    sums.row(sums.rows() - 1) = acc;
    out.labels.push_back(frames.labels[order[i]]);
    out.ids.push_back({id.source, id.video, 0});
    i = j;
  }
  out.rows = detail::normalize_rows<float>(sums);
  return out;
}

double linear_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                    const ProbeOptions& opts) {
  train.validate();
  test.validate();
  if (opts.epochs < 0) throw ParameterError("probe epochs must be >= 0");
  if (!(opts.lr > 0)) throw ParameterError("probe lr must be positive");
  if (train.size() == 0 || test.size() == 0) throw ParameterError("probe needs nonempty tables");
  if (train.rows.cols() != test.rows.cols()) {
    throw DimensionError("probe: train width " + std::to_string(train.rows.cols()) +
                         " vs test width " + std::to_string(test.rows.cols()));
  }
  const auto [lo, hi] = std::minmax_element(train.labels.begin(), train.labels.end());
  if (*lo == *hi) throw ParameterError("probe: training set has a single class");
  if (*lo < 0) throw ParameterError("probe: negative class label");
  const int num_classes =
      std::max(*hi, *std::max_element(test.labels.begin(), test.labels.end())) + 1;

  const MatrixD x = train.rows.cast<double>();
  const auto n = x.rows();
  MatrixD y = MatrixD::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) y(i, train.labels[static_cast<std::size_t>(i)]) = 1;

  MatrixD w = MatrixD::Zero(x.cols(), num_classes);
  MatrixD b = MatrixD::Zero(1, num_classes);
  for (int e = 0; e < opts.epochs; ++e) {
    MatrixD logits = (x * w).rowwise() + b.row(0);
    const MatrixD p = detail::stable_softmax_rows(logits);
    const MatrixD g = (p - y) / static_cast<double>(n);
    w -= opts.lr * (x.transpose() * g);
    b -= opts.lr * g.colwise().sum();
  }

  const MatrixD logits = (test.rows.cast<double>() * w).rowwise() + b.row(0);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, arg)) arg = c;
    }
    if (arg == test.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

RetrievalResult knn_retrieval(const EmbeddingTable& query, const EmbeddingTable& gallery,
                              std::span<const int> ks) {
  query.validate();
  gallery.validate();
  if (gallery.size() == 0) throw ParameterError("retrieval gallery is empty");
  if (query.size() > 0 && query.rows.cols() != gallery.rows.cols()) {
    throw DimensionError("retrieval: query width " + std::to_string(query.rows.cols()) +
                         " vs gallery width " + std::to_string(gallery.rows.cols()));
  }
  for (int k : ks) {
    if (k < 1) throw ParameterError("retrieval k must be >= 1");
    if (static_cast<std::size_t>(k) > gallery.size()) {
      throw ParameterError("retrieval k " + std::to_string(k) + " exceeds gallery size " +
                           std::to_string(gallery.size()));
    }
  }
  RetrievalResult res;
  res.ks.assign(ks.begin(), ks.end());
  std::vector<std::size_t> hits(ks.size(), 0);
  res.first_hit_rank.reserve(query.size());

  std::vector<std::size_t> gid(gallery.size());
  std::iota(gid.begin(), gid.end(), std::size_t{0});
  std::sort(gid.begin(), gid.end(),
            [&](std::size_t a, std::size_t b) { return gallery.ids[a] < gallery.ids[b]; });

  const MatrixF sims = query.rows * gallery.rows.transpose();
  std::vector<std::size_t> order;
  for (Eigen::Index q = 0; q < sims.rows(); ++q) {
    const auto& qid = query.ids[static_cast<std::size_t>(q)];
    order.clear();
    for (auto g : gid) {
      if (gallery.ids[g] != qid) order.push_back(g);
    }
    // gid is already in id order, so a stable sort by similarity breaks ties by lower id.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sims(q, static_cast<Eigen::Index>(a)) > sims(q, static_cast<Eigen::Index>(b));
    });
    const int label = query.labels[static_cast<std::size_t>(q)];
    int rank = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (gallery.labels[order[i]] == label) {
        rank = static_cast<int>(i) + 1;
        break;
      }
    }
    res.first_hit_rank.push_back(rank);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (rank > 0 && rank <= ks[j]) ++hits[j];
    }
  }
  for (auto h : hits) {
    res.hit_rates.push_back(query.size() == 0 ? 0.0
                                              : static_cast<double>(h) /
                                                    static_cast<double>(query.size()));
  }
  return res;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "mode = " << report.mode << "\n";
  os << "space = " << report.space << "\n";
  os << "num_queries = " << report.num_queries << "\n";
  if (report.probe_accuracy) os << "probe_top1 = " << *report.probe_accuracy << "\n";
  if (report.retrieval) {
    for (std::size_t i = 0; i < report.retrieval->ks.size(); ++i) {
      os << "hit_rate@" << report.retrieval->ks[i] << " = " << report.retrieval->hit_rates[i]
         << "\n";
    }
  }
  return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << format_report(report);
  if (!f) throw IoError("write failed: " + path.string());
}

void write_ranks_csv(const EmbeddingTable& query, const RetrievalResult& result,
                     const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "query_index,video,frame,label,first_hit_rank\n";
  for (std::size_t i = 0; i < result.first_hit_rank.size(); ++i) {
    f << i << ',' << query.ids[i].video << ',' << query.ids[i].frame << ',' << query.labels[i]
      << ',' << result.first_hit_rank[i] << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace cyclecl
