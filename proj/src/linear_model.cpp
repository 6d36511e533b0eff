#include "relabel/linear_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <set>

#include "relabel/dataset.hpp"
#include "relabel/error.hpp"
#include "relabel/hash.hpp"
#include "relabel/serialize.hpp"

namespace relabel {

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::invalid_argument, "epochs must be >= 1");
  if (!(learning_rate > 0)) throw Error(ErrorCode::invalid_argument, "learning_rate must be > 0");
  if (!(l2 >= 0)) throw Error(ErrorCode::invalid_argument, "l2 must be >= 0");
}

namespace {

constexpr std::uint32_t kMask = static_cast<std::uint32_t>(kFeatureDim - 1);

HashedFeature hashed(std::string_view name, float value, std::uint64_t seed) {
  const std::uint64_t h = hash64(name, seed);
  const float sign = (h >> 63) ? -1.0f : 1.0f;
  return HashedFeature{static_cast<std::uint32_t>(h) & kMask, sign * value};
}

struct Example {
  std::vector<HashedFeature> features;
  int target = 0;  // class index; for ctr the 0/1 label
};

Eigen::VectorXf logits_of(const WeightMatrix<float>& w, const std::vector<HashedFeature>& features) {
  Eigen::VectorXf z = Eigen::VectorXf::Zero(w.cols());
  for (const auto& f : features) z.noalias() += f.value * w.row(f.index).transpose();
  return z;
}

Eigen::VectorXf softmax(const Eigen::VectorXf& z) {
  Eigen::VectorXf p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

// d(loss)/d(logits) and the loss for one example.
float gradient(TaskKind task, const Eigen::VectorXf& z, int target, Eigen::VectorXf& grad) {
  if (task == TaskKind::ctr) {
    const float p = sigmoid(z(0));
    grad.resize(1);
    grad(0) = p - static_cast<float>(target);
    const float q = target == 1 ? p : 1.0f - p;
    return -std::log(std::max(q, 1e-12f));
  }
  grad = softmax(z);
  const float loss = -std::log(std::max(grad(target), 1e-12f));
  grad(target) -= 1.0f;
  return loss;
}

// Fisher-Yates with mt19937_64, whose output sequence is fixed by the standard.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

std::vector<std::string> item_tokens(const Item& item) { return payload_tokens(item.payload); }

// Per-token BIO targets for one tagging item.
std::vector<int> bio_targets(const Item& item, std::size_t n_tokens,
                             const std::vector<std::string>& tag_names) {
  std::vector<int> tags(n_tokens, 0);
  auto tag_index = [&](const std::string& name) {
    auto it = std::find(tag_names.begin(), tag_names.end(), name);
    return static_cast<int>(it - tag_names.begin());
  };
  for (const auto& s : std::get<SpanSet>(item.label()).spans) {
    tags[static_cast<std::size_t>(s.start)] = tag_index("B-" + s.entity_class);
    for (int t = s.start + 1; t < s.end; ++t) tags[static_cast<std::size_t>(t)] = tag_index("I-" + s.entity_class);
  }
  return tags;
}

std::string model_fingerprint(const LinearModel& model) {
  return "linear-" + sha256(serialize_model(model)).hex().substr(0, 12);
}

}  // namespace

std::vector<HashedFeature> text_features(std::span<const std::string> tokens, std::uint64_t seed) {
  std::vector<HashedFeature> out;
  out.reserve(2 * tokens.size() + 1);
  out.push_back(hashed("bias", 1.0f, seed));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.push_back(hashed("u\x1f" + tokens[i], 1.0f, seed));
    if (i + 1 < tokens.size()) out.push_back(hashed("b\x1f" + tokens[i] + "\x1f" + tokens[i + 1], 1.0f, seed));
  }
  return out;
}

std::vector<HashedFeature> token_features(std::span<const std::string> tokens, std::size_t position,
                                          std::uint64_t seed) {
  auto at = [&](long offset) -> std::string {
    const long i = static_cast<long>(position) + offset;
    if (i < 0) return "<s>";
    if (i >= static_cast<long>(tokens.size())) return "</s>";
    return tokens[static_cast<std::size_t>(i)];
  };
  std::vector<HashedFeature> out;
  out.push_back(hashed("bias", 1.0f, seed));
  for (long off = -2; off <= 2; ++off) {
    out.push_back(hashed("w" + std::to_string(off) + "\x1f" + at(off), 1.0f, seed));
  }
  out.push_back(hashed("p\x1f" + at(-1) + "\x1f" + at(0), 1.0f, seed));
  const std::string cur = at(0);
  out.push_back(hashed("pre3\x1f" + cur.substr(0, 3), 1.0f, seed));
  out.push_back(hashed("suf3\x1f" + (cur.size() > 3 ? cur.substr(cur.size() - 3) : cur), 1.0f, seed));
  out.push_back(hashed("ppre3\x1f" + at(-1).substr(0, 3), 1.0f, seed));
  return out;
}

std::vector<HashedFeature> ctr_features(const FeatureMap& features, std::uint64_t seed) {
  std::vector<HashedFeature> out;
  out.push_back(hashed("bias", 1.0f, seed));
  for (const auto& [name, value] : features) {
    out.push_back(hashed("f\x1f" + name, static_cast<float>(value), seed));
  }
  return out;
}

std::vector<std::string> bio_tag_names(std::span<const std::string> entity_classes) {
  std::vector<std::string> names{"O"};
  for (const auto& c : entity_classes) {
    names.push_back("B-" + c);
    names.push_back("I-" + c);
  }
  return names;
}

std::vector<Span> decode_bio(std::span<const int> tags, std::span<const std::string> tag_names) {
  std::vector<Span> spans;
  std::optional<Span> open;
  auto close = [&] {
    if (open) spans.push_back(*open);
    open.reset();
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& name = tag_names[static_cast<std::size_t>(tags[i])];
    const int pos = static_cast<int>(i);
    if (name == "O" || name.size() < 2) {
      close();
      continue;
    }
    const bool inside = name[0] == 'I';
    const std::string cls = name.substr(2);
    if (inside && open && open->entity_class == cls) {
      open->end = pos + 1;
    } else {
      close();
      open = Span{pos, pos + 1, cls};
    }
  }
  close();
  return spans;
}

LinearModel train(const DatasetVersion& version, const TrainConfig& cfg,
                  std::vector<double>* epoch_losses) {
  cfg.validate();
  if (version.task != TaskKind::classification && version.task != TaskKind::tagging &&
      version.task != TaskKind::ctr) {
    throw Error(ErrorCode::unsupported_task,
                "no baseline model for task " + std::string(to_string(version.task)));
  }

  LinearModel model;
  model.task = version.task;
  model.hash_seed = cfg.seed;
  model.config = cfg;

  std::vector<const Item*> train_items;
  for (const auto& item : version.items) {
    if (item.split == Split::train) train_items.push_back(&item);
  }
  if (train_items.empty()) throw Error(ErrorCode::invalid_argument, "train split is empty");

  std::vector<Example> examples;
  switch (version.task) {
    case TaskKind::classification: {
      std::set<std::string> names;
      for (const Item* item : train_items) names.insert(std::get<ClassLabel>(item->label()).name);
      model.class_names.assign(names.begin(), names.end());
      for (const Item* item : train_items) {
        const auto& name = std::get<ClassLabel>(item->label()).name;
        const int target = static_cast<int>(
            std::lower_bound(model.class_names.begin(), model.class_names.end(), name) -
            model.class_names.begin());
        examples.push_back(Example{text_features(item_tokens(*item), cfg.seed), target});
      }
      break;
    }
    case TaskKind::tagging: {
      const auto classes = entity_classes(version);
      model.class_names = bio_tag_names(classes);
      for (const Item* item : train_items) {
        const auto tokens = item_tokens(*item);
        const auto targets = bio_targets(*item, tokens.size(), model.class_names);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
          examples.push_back(Example{token_features(tokens, i, cfg.seed), targets[i]});
        }
      }
      break;
    }
    default: {
      model.class_names = {"click"};
      for (const Item* item : train_items) {
        examples.push_back(Example{ctr_features(std::get<FeatureMap>(item->payload), cfg.seed),
                                   std::get<ClickLabel>(item->label()).value});
      }
      break;
    }
  }

  const auto k = static_cast<Eigen::Index>(model.class_names.size());
  model.weights = WeightMatrix<float>::Zero(static_cast<Eigen::Index>(kFeatureDim), k);

  const float lr = static_cast<float>(cfg.learning_rate);
  const float decay = 1.0f - static_cast<float>(cfg.learning_rate * cfg.l2);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  Eigen::VectorXf grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t idx : order) {
      const Example& ex = examples[idx];
      const Eigen::VectorXf z = logits_of(model.weights, ex.features);
      gradient(model.task, z, ex.target, grad);
      for (const auto& f : ex.features) {
        auto row = model.weights.row(f.index);
        row *= decay;
        row.noalias() -= (lr * f.value) * grad.transpose();
      }
    }
    if (epoch_losses) {
      double total = 0;
      for (const auto& ex : examples) {
        total += gradient(model.task, logits_of(model.weights, ex.features), ex.target, grad);
      }
      epoch_losses->push_back(total / static_cast<double>(examples.size()));
    }
  }
  model.model_id = model_fingerprint(model);
  return model;
}

std::vector<Prediction> out_of_fold_predict(const LinearModel& full, const DatasetVersion& version,
                                            const TrainConfig& cfg, int folds) {
  std::vector<Prediction> out = predict(full, version);
  if (folds < 2) return out;
  std::vector<int> fold_of(version.items.size(), -1);
  for (std::size_t i = 0; i < version.items.size(); ++i) {
    const Item& item = version.items[i];
    if (item.split == Split::train) {
      fold_of[i] = static_cast<int>(hash64(item.id, cfg.seed ^ 0x6f6f66ULL) % static_cast<std::uint64_t>(folds));
    }
  }
  for (int f = 0; f < folds; ++f) {
    DatasetVersion rest;
    rest.task = version.task;
    rest.round = version.round;
    DatasetVersion held;
    held.task = version.task;
    held.round = version.round;
    std::vector<std::size_t> held_index;
    for (std::size_t i = 0; i < version.items.size(); ++i) {
      if (fold_of[i] == f) {
        held.items.push_back(version.items[i]);
        held_index.push_back(i);
      } else if (fold_of[i] >= 0) {
        rest.items.push_back(version.items[i]);
      }
    }
    if (held.items.empty() || rest.items.empty()) continue;
    const LinearModel model = train(rest, cfg);
    auto preds = predict(model, held);
    for (std::size_t j = 0; j < preds.size(); ++j) {
      preds[j].model_id = full.model_id;
      out[held_index[j]] = std::move(preds[j]);
    }
  }
  return out;
}

Eigen::VectorXf class_scores(const LinearModel& model, std::span<const std::string> tokens) {
  if (model.task != TaskKind::classification) {
    throw Error(ErrorCode::task_mismatch, "class_scores needs a classification model");
  }
  return logits_of(model.weights, text_features(tokens, model.hash_seed));
}

std::vector<Prediction> predict(const LinearModel& model, const DatasetVersion& version) {
  if (model.task != version.task) {
    throw Error(ErrorCode::task_mismatch, "model task " + std::string(to_string(model.task)) +
                                              " does not match dataset task " +
                                              std::string(to_string(version.task)));
  }
  auto argmax = [](const Eigen::VectorXf& z) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < z.size(); ++i) {
      if (z(i) > z(best)) best = i;
    }
    return static_cast<int>(best);
  };

  std::vector<Prediction> out;
  out.reserve(version.items.size());
  for (const auto& item : version.items) {
    Prediction p;
    p.item_id = item.id;
    p.model_id = model.model_id;
    p.round = version.round + 1;
    switch (model.task) {
      case TaskKind::classification:
        p.value = ClassLabel{model.class_names[static_cast<std::size_t>(
            argmax(class_scores(model, item_tokens(item))))]};
        break;
      case TaskKind::tagging: {
        const auto tokens = item_tokens(item);
        std::vector<int> tags(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
          tags[i] = argmax(logits_of(model.weights, token_features(tokens, i, model.hash_seed)));
        }
        p.value = SpanSet{decode_bio(tags, model.class_names)};
        break;
      }
      default: {
        const auto z = logits_of(model.weights,
                                 ctr_features(std::get<FeatureMap>(item.payload), model.hash_seed));
        const double score = static_cast<double>(sigmoid(z(0)));
        p.score = score;
        p.value = ClickLabel{score >= 0.5 ? 1 : 0};
        break;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[8] = {'R', 'L', 'B', 'L', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kCheckpointFormat = 1;

template <class T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw Error(ErrorCode::malformed_record, "model checkpoint is truncated");
    }
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto len = get<std::uint32_t>();
    if (pos_ + len > bytes_.size()) throw Error(ErrorCode::malformed_record, "model checkpoint is truncated");
    std::string s(bytes_.substr(pos_, len));
    pos_ += len;
    return s;
  }

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::malformed_record, "model checkpoint is truncated");
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const LinearModel& model) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointFormat);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.task));
  put<std::uint64_t>(out, model.hash_seed);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(model.weights.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(model.weights.cols()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.class_names.size()));
  for (const auto& name : model.class_names) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
  }
  put<std::int32_t>(out, model.config.epochs);
  put<double>(out, model.config.learning_rate);
  put<std::uint64_t>(out, model.config.seed);
  put<double>(out, model.config.l2);
  const float* data = model.weights.data();
  const auto count = static_cast<std::size_t>(model.weights.size());
  out.reserve(out.size() + count * sizeof(float));
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
  } else {
    for (std::size_t i = 0; i < count; ++i) put<float>(out, data[i]);
  }
  return out;
}

LinearModel deserialize_model(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw Error(ErrorCode::malformed_record, "not a model checkpoint (bad magic)");
  }
  if (in.get<std::uint32_t>() != kCheckpointFormat) {
    throw Error(ErrorCode::malformed_record, "unsupported checkpoint format version");
  }
  LinearModel model;
  const auto task = in.get<std::uint32_t>();
  if (task > static_cast<std::uint32_t>(TaskKind::ctr)) {
    throw Error(ErrorCode::malformed_record, "checkpoint has an unknown task");
  }
  model.task = static_cast<TaskKind>(task);
  model.hash_seed = in.get<std::uint64_t>();
  const auto rows = in.get<std::uint64_t>();
  const auto cols = in.get<std::uint64_t>();
  const auto n_classes = in.get<std::uint32_t>();
  if (rows != kFeatureDim || cols != n_classes || n_classes == 0) {
    throw Error(ErrorCode::malformed_record, "checkpoint dimensions are inconsistent");
  }
  for (std::uint32_t i = 0; i < n_classes; ++i) model.class_names.push_back(in.get_string());
  model.config.epochs = in.get<std::int32_t>();
  model.config.learning_rate = in.get<double>();
  model.config.seed = in.get<std::uint64_t>();
  model.config.l2 = in.get<double>();
  model.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  float* data = model.weights.data();
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  if constexpr (std::endian::native == std::endian::little) {
    const auto raw = in.take(count * sizeof(float));
    std::memcpy(data, raw.data(), raw.size());
  } else {
    for (std::size_t i = 0; i < count; ++i) data[i] = in.get<float>();
  }
  if (!in.done()) throw Error(ErrorCode::malformed_record, "trailing bytes after checkpoint weights");
  model.model_id = model_fingerprint(model);
  return model;
}

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

LinearModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace relabel
