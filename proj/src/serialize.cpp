#include "relabel/serialize.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "relabel/error.hpp"

namespace relabel {

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::malformed_record, what);
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object()) malformed("expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) malformed(std::string("missing field '") + key + "'");
  return *it;
}

std::string string_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_string()) malformed(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

int int_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_number_integer()) malformed(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

double number_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_number()) malformed(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

void check_format(const Json& j) {
  auto it = j.find("format");
  if (it != j.end() && (!it->is_number_integer() || it->get<int>() != kFormatVersion)) {
    malformed("unsupported format version");
  }
}

Span span_from_json(const Json& j) {
  return Span{int_field(j, "start"), int_field(j, "end"), string_field(j, "class")};
}

Box box_from_json(const Json& j) {
  return Box{number_field(j, "x_min"), number_field(j, "y_min"), number_field(j, "x_max"),
             number_field(j, "y_max"), string_field(j, "class")};
}

template <class T, class F>
std::vector<T> array_from_json(const Json& j, F&& parse) {
  if (!j.is_array()) malformed("expected a JSON array");
  std::vector<T> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(parse(e));
  return out;
}

template <class T>
Json array_to_json(const std::vector<T>& values) {
  Json a = Json::array();
  for (const auto& v : values) a.push_back(to_json(v));
  return a;
}

}  // namespace

std::string dump(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::strict); }

Json to_json(const Span& span) {
  Json j;
  j["start"] = span.start;
  j["end"] = span.end;
  j["class"] = span.entity_class;
  return j;
}

Json to_json(const Box& box) {
  Json j;
  j["x_min"] = box.x_min;
  j["y_min"] = box.y_min;
  j["x_max"] = box.x_max;
  j["y_max"] = box.y_max;
  j["class"] = box.object_class;
  return j;
}

Json to_json(const Label& label) {
  return std::visit(
      [](const auto& l) -> Json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, ClassLabel>) return l.name;
        if constexpr (std::is_same_v<T, SpanSet>) return array_to_json(l.spans);
        if constexpr (std::is_same_v<T, BoxSet>) return array_to_json(l.boxes);
        if constexpr (std::is_same_v<T, TextLabel>) return l.text;
        if constexpr (std::is_same_v<T, ClickLabel>) return l.value;
      },
      label);
}

Label label_from_json(const Json& j, TaskKind task) {
  switch (task) {
    case TaskKind::classification:
      if (!j.is_string()) malformed("classification label must be a string");
      return ClassLabel{j.get<std::string>()};
    case TaskKind::tagging:
      return SpanSet{array_from_json<Span>(j, span_from_json)};
    case TaskKind::detection:
      return BoxSet{array_from_json<Box>(j, box_from_json)};
    case TaskKind::generation:
      if (!j.is_string()) malformed("generation label must be a string");
      return TextLabel{j.get<std::string>()};
    case TaskKind::ctr: {
      if (!j.is_number()) malformed("ctr label must be a number");
      const double v = j.get<double>();
      if (v != 0.0 && v != 1.0) {
        throw Error(ErrorCode::invariant_violation, "ctr label must be exactly 0 or 1");
      }
      return ClickLabel{static_cast<int>(v)};
    }
  }
  malformed("unknown task");
}

Json to_json(const Payload& payload) {
  if (const auto* text = std::get_if<std::string>(&payload)) return *text;
  Json j = Json::object();
  for (const auto& [name, value] : std::get<FeatureMap>(payload)) j[name] = value;
  return j;
}

Payload payload_from_json(const Json& j, TaskKind task) {
  if (task == TaskKind::ctr) {
    if (!j.is_object()) malformed("ctr payload must be an object of numeric features");
    FeatureMap features;
    for (const auto& [name, value] : j.items()) {
      if (!value.is_number()) malformed("ctr feature '" + name + "' must be a number");
      features.emplace(name, value.get<double>());
    }
    return features;
  }
  if (!j.is_string()) malformed("payload must be a string");
  return j.get<std::string>();
}

Json to_json(const FlagReason& reason) {
  Json j;
  j["kind"] = reason_kind(reason);
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, LabelMismatch>) {
          j["predicted"] = r.predicted;
          j["human"] = r.human;
        } else if constexpr (std::is_same_v<T, SpanMismatch>) {
          j["entity_class"] = r.entity_class;
          j["missing_spans"] = array_to_json(r.missing);
          j["spurious_spans"] = array_to_json(r.spurious);
        } else if constexpr (std::is_same_v<T, BoxMismatch>) {
          j["unmatched_human"] = array_to_json(r.unmatched_human);
          j["unmatched_model"] = array_to_json(r.unmatched_model);
          Json pairs = Json::array();
          for (const auto& p : r.low_iou_pairs) {
            Json e;
            e["human_index"] = p.human_index;
            e["model_index"] = p.model_index;
            e["iou"] = p.iou;
            pairs.push_back(std::move(e));
          }
          j["low_iou_pairs"] = std::move(pairs);
        } else if constexpr (std::is_same_v<T, GenerationMismatch>) {
          j["metric"] = r.metric;
          j["value"] = r.value;
        } else {
          j["score"] = r.score;
          j["label"] = r.label;
          j["gap"] = r.gap;
        }
      },
      reason);
  return j;
}

FlagReason reason_from_json(const Json& j) {
  const std::string kind = string_field(j, "kind");
  if (kind == "label-mismatch") {
    return LabelMismatch{string_field(j, "predicted"), string_field(j, "human")};
  }
  if (kind == "span-mismatch") {
    return SpanMismatch{string_field(j, "entity_class"),
                        array_from_json<Span>(field(j, "missing_spans"), span_from_json),
                        array_from_json<Span>(field(j, "spurious_spans"), span_from_json)};
  }
  if (kind == "box-mismatch") {
    BoxMismatch r;
    r.unmatched_human = array_from_json<Box>(field(j, "unmatched_human"), box_from_json);
    r.unmatched_model = array_from_json<Box>(field(j, "unmatched_model"), box_from_json);
    r.low_iou_pairs = array_from_json<LowIouPair>(field(j, "low_iou_pairs"), [](const Json& e) {
      return LowIouPair{int_field(e, "human_index"), int_field(e, "model_index"),
                        number_field(e, "iou")};
    });
    return r;
  }
  if (kind == "generation-mismatch") {
    return GenerationMismatch{string_field(j, "metric"), number_field(j, "value")};
  }
  if (kind == "ctr-disagreement") {
    return CtrDisagreement{number_field(j, "score"), int_field(j, "label"), number_field(j, "gap")};
  }
  malformed("unknown flag reason '" + kind + "'");
}

Json to_json(const Item& item) {
  Json j;
  j["format"] = kFormatVersion;
  j["id"] = item.id;
  j["split"] = to_string(item.split);
  j["payload"] = to_json(item.payload);
  j["label"] = to_json(item.label());
  Json history = Json::array();
  for (const auto& e : item.label_history) {
    Json h;
    h["round"] = e.round;
    h["source"] = to_string(e.source);
    h["label"] = to_json(e.label);
    history.push_back(std::move(h));
  }
  j["label_history"] = std::move(history);
  return j;
}

Item item_from_json(const Json& j, TaskKind task) {
  check_format(j);
  Item item;
  item.id = string_field(j, "id");
  item.split = parse_split(string_field(j, "split"));
  item.payload = payload_from_json(field(j, "payload"), task);
  const Label label = label_from_json(field(j, "label"), task);
  auto hist = j.find("label_history");
  if (hist == j.end()) {
    item.label_history.push_back(LabelEvent{0, LabelSource::human, label});
  } else {
    if (!hist->is_array()) malformed("label_history must be an array");
    for (const auto& h : *hist) {
      item.label_history.push_back(LabelEvent{int_field(h, "round"),
                                              parse_label_source(string_field(h, "source")),
                                              label_from_json(field(h, "label"), task)});
    }
    if (item.label_history.empty()) {
      throw Error(ErrorCode::invariant_violation, "item '" + item.id + "' has empty label_history");
    }
    if (item.label() != label) {
      throw Error(ErrorCode::invariant_violation,
                  "item '" + item.id + "' label differs from the last label_history entry");
    }
  }
  return item;
}

Json to_json(const Prediction& pred) {
  Json j;
  j["format"] = kFormatVersion;
  j["item_id"] = pred.item_id;
  j["prediction"] = to_json(pred.value);
  if (pred.score) j["score"] = *pred.score;
  j["model_id"] = pred.model_id;
  j["round"] = pred.round;
  return j;
}

Prediction prediction_from_json(const Json& j, TaskKind task) {
  check_format(j);
  Prediction p;
  p.item_id = string_field(j, "item_id");
  p.value = label_from_json(field(j, "prediction"), task);
  if (auto it = j.find("score"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) malformed("score must be a number");
    p.score = it->get<double>();
  }
  p.model_id = j.contains("model_id") ? string_field(j, "model_id") : std::string();
  p.round = j.contains("round") ? int_field(j, "round") : 0;
  return p;
}

Json to_json(const NoiseFlag& flag) {
  Json j;
  j["format"] = kFormatVersion;
  j["item_id"] = flag.item_id;
  j["round"] = flag.round;
  j["action"] = to_string(flag.action);
  j["severity"] = flag.severity;
  j["reason"] = to_json(flag.reason);
  return j;
}

NoiseFlag flag_from_json(const Json& j) {
  check_format(j);
  NoiseFlag f;
  f.item_id = string_field(j, "item_id");
  f.round = int_field(j, "round");
  const std::string action = string_field(j, "action");
  if (action != "relabel" && action != "drop") malformed("unknown flag action '" + action + "'");
  f.action = action == "drop" ? FlagAction::drop : FlagAction::relabel;
  f.severity = number_field(j, "severity");
  f.reason = reason_from_json(field(j, "reason"));
  return f;
}

Json to_json(const ReviewTask& task) {
  Json j;
  j["format"] = kFormatVersion;
  j["item_id"] = task.item_id;
  j["round"] = task.round;
  j["task"] = to_string(task_of(task.previous_human_label));
  j["mode"] = to_string(task.mode);
  j["queue_position"] = task.queue_position;
  j["severity"] = task.severity;
  j["payload"] = to_json(task.payload);
  j["previous_human_label"] = to_json(task.previous_human_label);
  j["model_reference"] = to_json(task.model_reference);
  j["reason"] = to_json(task.reason);
  return j;
}

ReviewTask review_task_from_json(const Json& j, TaskKind task) {
  check_format(j);
  ReviewTask t;
  t.item_id = string_field(j, "item_id");
  t.round = int_field(j, "round");
  t.mode = parse_review_mode(string_field(j, "mode"));
  t.queue_position = int_field(j, "queue_position");
  t.severity = number_field(j, "severity");
  t.payload = payload_from_json(field(j, "payload"), task);
  t.previous_human_label = label_from_json(field(j, "previous_human_label"), task);
  t.model_reference = label_from_json(field(j, "model_reference"), task);
  t.reason = reason_from_json(field(j, "reason"));
  return t;
}

Json to_json(const ReviewDecision& d) {
  Json j;
  j["format"] = kFormatVersion;
  j["item_id"] = d.item_id;
  j["round"] = d.round;
  j["annotator_id"] = d.annotator_id;
  j["choice"] = to_string(d.choice);
  if (d.new_label) j["new_label"] = to_json(*d.new_label);
  j["submitted_at"] = format_timestamp(d.submitted_at_ms);
  if (d.resolved_label) j["label"] = to_json(*d.resolved_label);
  return j;
}

// A missing submitted_at parses as -1; the review service stamps it.
ReviewDecision decision_from_json(const Json& j, TaskKind task) {
  check_format(j);
  ReviewDecision d;
  d.item_id = string_field(j, "item_id");
  d.round = int_field(j, "round");
  d.annotator_id = string_field(j, "annotator_id");
  d.choice = parse_choice(string_field(j, "choice"));
  if (auto it = j.find("new_label"); it != j.end() && !it->is_null()) {
    d.new_label = label_from_json(*it, task);
  }
  if (auto it = j.find("submitted_at"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) malformed("submitted_at must be an ISO-8601 string");
    d.submitted_at_ms = parse_timestamp(it->get<std::string>());
  } else {
    d.submitted_at_ms = -1;
  }
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    d.resolved_label = label_from_json(*it, task);
  }
  return d;
}

std::string format_timestamp(std::int64_t unix_ms) {
  std::int64_t secs = unix_ms / 1000;
  std::int64_t ms = unix_ms % 1000;
  if (ms < 0) {
    ms += 1000;
    secs -= 1;
  }
  const std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::int64_t parse_timestamp(std::string_view text) {
  const std::string s(text);
  std::tm tm{};
  int ms = 0;
  int consumed = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon, &tm.tm_mday,
                  &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &consumed) != 6) {
    malformed("invalid timestamp '" + s + "'");
  }
  std::string_view rest = std::string_view(s).substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == '.') {
    rest.remove_prefix(1);
    int digits = 0;
    while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') {
      if (digits < 3) ms = ms * 10 + (rest.front() - '0');
      ++digits;
      rest.remove_prefix(1);
    }
    if (digits == 0) malformed("invalid timestamp '" + s + "'");
    for (int d = digits; d < 3; ++d) ms *= 10;
  }
  if (rest != "Z") malformed("timestamp must be UTC ('Z' suffix): '" + s + "'");
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  return static_cast<std::int64_t>(timegm(&tm)) * 1000 + ms;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, int)>& parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed_record, where + ": " + e.what());
    }
    try {
      parse(j, line_no);
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed_record, where + ": " + e.what());
    }
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path, TaskKind task) {
  std::vector<Prediction> out;
  for_each_jsonl(path, [&](const Json& j, int) { out.push_back(prediction_from_json(j, task)); });
  return out;
}

std::vector<NoiseFlag> read_flags(const std::filesystem::path& path) {
  std::vector<NoiseFlag> out;
  for_each_jsonl(path, [&](const Json& j, int) { out.push_back(flag_from_json(j)); });
  return out;
}

std::vector<ReviewTask> read_review_tasks(const std::filesystem::path& path, TaskKind task) {
  std::vector<ReviewTask> out;
  for_each_jsonl(path, [&](const Json& j, int) { out.push_back(review_task_from_json(j, task)); });
  return out;
}

std::vector<ReviewDecision> read_decisions(const std::filesystem::path& path, TaskKind task) {
  std::vector<ReviewDecision> out;
  for_each_jsonl(path, [&](const Json& j, int) { out.push_back(decision_from_json(j, task)); });
  return out;
}

}  // namespace relabel
