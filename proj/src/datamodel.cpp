#include "habitmask/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "habitmask/errors.hpp"

namespace habitmask {

namespace {

constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "nose",       "head_bottom", "head_top",  "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",  "left_hip",
    "right_hip",  "left_knee",   "right_knee", "left_ankle",  "right_ankle",
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view joint_name(std::size_t index) { return kJointNames.at(index); }

std::size_t mirror_joint(std::size_t index) {
    if (index >= kNumJoints) throw IndexError("joint index out of range");
    if (index <= 2) return index;
    // Left/right pairs occupy (3,4), (5,6), ... (13,14).
    return index % 2 == 1 ? index + 1 : index - 1;
}

bool BBox::valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) && std::isfinite(y_max) &&
           x_min < x_max && y_min < y_max;
}

// ---------------------------------------------------------------------------
// ClipTensor

ClipTensor::ClipTensor(std::size_t channels, std::size_t frames, std::size_t width, std::size_t height, float fill)
    : pixels_({channels, frames, width, height}, fill) {}

ClipTensor::ClipTensor(num::Tensor<float> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 4) throw ShapeError("clip tensor must be rank 4 (c, L, w, h)");
    if (!pixels_.all_finite()) throw InvariantError("clip tensor contains non-finite values");
}

num::Tensor<float> ClipTensor::frame(std::size_t t) const {
    if (t >= frames()) throw IndexError("frame index out of range");
    const std::size_t plane = width() * height();
    num::Tensor<float> out({channels(), width(), height()});
    for (std::size_t c = 0; c < channels(); ++c)
        std::copy_n(pixels_.ptr() + (c * frames() + t) * plane, plane, out.ptr() + c * plane);
    return out;
}

void ClipTensor::set_frame(std::size_t t, const num::Tensor<float>& frame) {
    if (t >= frames()) throw IndexError("frame index out of range");
    if (frame.dims() != num::Shape{channels(), width(), height()}) throw ShapeError("frame shape mismatch");
    const std::size_t plane = width() * height();
    for (std::size_t c = 0; c < channels(); ++c)
        std::copy_n(frame.ptr() + c * plane, plane, pixels_.ptr() + (c * frames() + t) * plane);
}

// ---------------------------------------------------------------------------
// LabelSpace

LabelSpace::LabelSpace(std::vector<std::string> categories, std::map<std::string, std::vector<std::string>> emotion_attrs)
    : categories_(std::move(categories)), emotion_attrs_(std::move(emotion_attrs)) {
    if (categories_.size() < 2) throw InvariantError("label space needs at least 2 categories");
    std::vector<std::string> sorted = categories_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw InvariantError("duplicate category names in label space");
    }
}

LabelSpace LabelSpace::habitual_behaviors() {
    // Six names are known; the remaining categories are numbered placeholders.
    std::vector<std::string> names = {"rub hands",  "cross legs", "touch ear",
                                      "scratch head", "touch nose", "play with hair"};
    for (std::size_t i = names.size() + 1; i <= 30; ++i) {
        names.push_back("habit_" + std::string(i < 10 ? "0" : "") + std::to_string(i));
    }
    std::map<std::string, std::vector<std::string>> emotions = {
        {"rub hands", {"anxiety/irritability"}},
        {"scratch head", {"anxiety/irritability"}},
        {"touch nose", {"anxiety/irritability"}},
        {"play with hair", {"relaxed"}},
    };
    return LabelSpace(std::move(names), std::move(emotions));
}

std::size_t LabelSpace::index_of(std::string_view name) const {
    const auto it = std::find(categories_.begin(), categories_.end(), name);
    if (it == categories_.end()) throw SchemaError("unknown category '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - categories_.begin());
}

bool LabelSpace::contains(std::string_view name) const {
    return std::find(categories_.begin(), categories_.end(), name) != categories_.end();
}

std::vector<std::string> LabelSpace::emotions(std::string_view name) const {
    const auto it = emotion_attrs_.find(std::string(name));
    return it == emotion_attrs_.end() ? std::vector<std::string>{} : it->second;
}

// ---------------------------------------------------------------------------
// Person IDs

std::vector<std::string> assign_person_ids(std::span<const BBox> boxes) {
    if (boxes.empty()) throw EmptyInput("assign_person_ids: no boxes");
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (!boxes[i].valid()) throw InvalidGeometry("assign_person_ids: box " + std::to_string(i) + " is degenerate");
    }
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ca = boxes[a].center_x(), cb = boxes[b].center_x();
        if (ca != cb) return ca < cb;
        if (boxes[a].y_min != boxes[b].y_min) return boxes[a].y_min < boxes[b].y_min;
        // Remaining coordinates keep the mapping independent of input order.
        const auto& p = boxes[a];
        const auto& q = boxes[b];
        return std::tie(p.x_min, p.y_max, p.x_max) < std::tie(q.x_min, q.y_max, q.x_max);
    });
    std::vector<std::string> ids(boxes.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) ids[order[rank]] = "P" + std::to_string(rank + 1);
    return ids;
}

// ---------------------------------------------------------------------------
// Annotation JSON Lines

std::vector<std::string> split_label(std::string_view text) {
    const std::string t = trim(text);
    if (t.empty() || t == "none") return {};
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto amp = t.find('&', start);
        out.push_back(trim(std::string_view(t).substr(start, amp == std::string::npos ? std::string::npos : amp - start)));
        if (amp == std::string::npos) break;
        start = amp + 1;
    }
    return out;
}

std::string join_labels(const std::vector<std::string>& labels) {
    if (labels.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out += " & ";
        out += labels[i];
    }
    return out;
}

namespace {

using nlohmann::json;

double as_number(const json& j, std::size_t line, const char* what) {
    if (!j.is_number()) throw ParseError(line, std::string(what) + " must be a number");
    return j.get<double>();
}

PersonFrame parse_person(const json& p, std::size_t line) {
    if (!p.is_object()) throw ParseError(line, "person entry must be an object");
    for (const char* key : {"id", "bbox", "joints", "label"}) {
        if (!p.contains(key)) throw ParseError(line, std::string("person is missing '") + key + "'");
    }
    PersonFrame pf;
    if (!p["id"].is_string()) throw ParseError(line, "person id must be a string");
    pf.person_id = p["id"].get<std::string>();
    const json& bb = p["bbox"];
    if (!bb.is_array() || bb.size() != 4) throw ParseError(line, "bbox must be [x0,y0,x1,y1]");
    pf.bbox = {as_number(bb[0], line, "bbox"), as_number(bb[1], line, "bbox"), as_number(bb[2], line, "bbox"),
               as_number(bb[3], line, "bbox")};
    if (!pf.bbox.valid()) throw SchemaError("line " + std::to_string(line) + ": degenerate bbox for " + pf.person_id);
    const json& js = p["joints"];
    if (!js.is_array()) throw ParseError(line, "joints must be an array");
    if (js.size() != kNumJoints) {
        throw SchemaError("line " + std::to_string(line) + ": expected 15 joints, got " + std::to_string(js.size()));
    }
    for (std::size_t k = 0; k < kNumJoints; ++k) {
        const json& jt = js[k];
        if (!jt.is_array() || jt.size() != 3) throw ParseError(line, "joint must be [x,y,conf]");
        Joint j{as_number(jt[0], line, "joint"), as_number(jt[1], line, "joint"), as_number(jt[2], line, "joint")};
        if (!std::isfinite(j.x) || !std::isfinite(j.y)) throw SchemaError("line " + std::to_string(line) + ": non-finite joint");
        if (!(j.conf >= 0.0 && j.conf <= 1.0)) {
            throw SchemaError("line " + std::to_string(line) + ": joint confidence outside [0,1]");
        }
        pf.skeleton.joints[k] = j;
    }
    if (!p["label"].is_string()) throw ParseError(line, "label must be a string");
    pf.labels = split_label(p["label"].get<std::string>());
    return pf;
}

void check_frame_ids(const FrameRecord& fr, std::size_t line) {
    if (fr.persons.empty()) return;
    std::vector<BBox> boxes;
    for (const auto& p : fr.persons) boxes.push_back(p.bbox);
    const auto expected = assign_person_ids(boxes);
    std::vector<std::string> seen;
    for (std::size_t i = 0; i < fr.persons.size(); ++i) {
        const std::string& id = fr.persons[i].person_id;
        if (std::find(seen.begin(), seen.end(), id) != seen.end()) {
            throw SchemaError("line " + std::to_string(line) + ": duplicate person id " + id);
        }
        seen.push_back(id);
    }
    for (std::size_t k = 1; k <= fr.persons.size(); ++k) {
        if (std::find(seen.begin(), seen.end(), "P" + std::to_string(k)) == seen.end()) {
            throw SchemaError("line " + std::to_string(line) + ": person ids are not dense (missing P" +
                              std::to_string(k) + ")");
        }
    }
    for (std::size_t i = 0; i < fr.persons.size(); ++i) {
        if (fr.persons[i].person_id != expected[i]) {
            throw SchemaError("line " + std::to_string(line) + ": person " + fr.persons[i].person_id +
                              " is not in left-to-right order (expected " + expected[i] + ")");
        }
    }
}

}  // namespace

ClipAnnotation parse_annotation(std::istream& in) {
    ClipAnnotation clip;
    std::string text;
    std::size_t line = 0;
    bool have_clip = false;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (trim(text).empty()) continue;
        json rec;
        try {
            rec = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(line, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object()) throw ParseError(line, "record must be a JSON object");
        for (const char* key : {"clip_id", "frame_idx", "persons"}) {
            if (!rec.contains(key)) throw ParseError(line, std::string("record is missing '") + key + "'");
        }
        if (!rec["clip_id"].is_string()) throw ParseError(line, "clip_id must be a string");
        if (!rec["frame_idx"].is_number_unsigned() && !rec["frame_idx"].is_number_integer()) {
            throw ParseError(line, "frame_idx must be an integer");
        }
        if (!rec["persons"].is_array()) throw ParseError(line, "persons must be an array");
        const std::string cid = rec["clip_id"].get<std::string>();
        if (!have_clip) {
            clip.clip_id = cid;
            if (rec.contains("fps")) clip.fps = as_number(rec["fps"], line, "fps");
            have_clip = true;
        } else if (cid != clip.clip_id) {
            throw SchemaError("line " + std::to_string(line) + ": clip_id changes within one file");
        }
        const long long idx = rec["frame_idx"].get<long long>();
        if (idx < 0) throw SchemaError("line " + std::to_string(line) + ": negative frame_idx");
        if (!clip.frames.empty() && std::size_t(idx) <= clip.frames.back().frame_idx) {
            throw SchemaError("line " + std::to_string(line) + ": frame_idx must increase");
        }
        FrameRecord fr;
        fr.frame_idx = std::size_t(idx);
        for (const auto& p : rec["persons"]) fr.persons.push_back(parse_person(p, line));
        check_frame_ids(fr, line);
        clip.frames.push_back(std::move(fr));
    }
    if (clip.frames.empty()) throw SchemaError("annotation has no frames");
    return clip;
}

ClipAnnotation parse_annotation(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_annotation(in);
}

void write_annotation(const ClipAnnotation& a, std::ostream& out) {
    if (a.frames.empty()) throw InvariantError("refusing to write an annotation without frames");
    for (const auto& fr : a.frames) {
        nlohmann::ordered_json rec;
        rec["clip_id"] = a.clip_id;
        rec["frame_idx"] = fr.frame_idx;
        rec["fps"] = a.fps;
        auto persons = nlohmann::ordered_json::array();
        for (const auto& p : fr.persons) {
            nlohmann::ordered_json pj;
            pj["id"] = p.person_id;
            pj["bbox"] = {p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max};
            auto joints = nlohmann::ordered_json::array();
            for (const auto& j : p.skeleton.joints) joints.push_back({j.x, j.y, j.conf});
            pj["joints"] = std::move(joints);
            pj["label"] = join_labels(p.labels);
            persons.push_back(std::move(pj));
        }
        rec["persons"] = std::move(persons);
        out << rec.dump() << '\n';
    }
}

std::string write_annotation(const ClipAnnotation& a) {
    std::ostringstream os;
    write_annotation(a, os);
    return os.str();
}

ClipAnnotation read_annotation_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_annotation(in);
}

void write_annotation_file(const std::filesystem::path& path, const ClipAnnotation& a) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    write_annotation(a, out);
    if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// .hclip container

std::string encode_clip(const ClipTensor& clip) {
    detail::ByteWriter w;
    w.str("HCLP");
    w.u16(kClipVersion);
    for (std::size_t d : clip.pixels().dims()) w.u32(static_cast<std::uint32_t>(d));
    w.raw(clip.pixels().ptr(), clip.pixels().size() * sizeof(float));
    return w.take();
}

ClipTensor decode_clip(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.str(4) != "HCLP") throw FormatError("bad clip magic");
    const std::uint16_t version = r.u16();
    if (version != kClipVersion) throw FormatError("unsupported clip version " + std::to_string(version));
    num::Shape dims(4);
    for (auto& d : dims) d = r.u32();
    const std::size_t n = num::shape_size(dims);
    if (r.remaining() != n * sizeof(float)) {
        throw FormatError("clip data length " + std::to_string(r.remaining()) + " does not match dims " +
                          num::shape_str(dims));
    }
    std::vector<float> data(n);
    r.raw(data.data(), n * sizeof(float));
    return ClipTensor(num::Tensor<float>(std::move(dims), std::move(data)));
}

void write_clip(const std::filesystem::path& path, const ClipTensor& clip) {
    detail::write_file_bytes(path.string(), encode_clip(clip));
}

ClipTensor read_clip(const std::filesystem::path& path) { return decode_clip(detail::read_file_bytes(path.string())); }

// ---------------------------------------------------------------------------
// Cropping

num::Tensor<float> crop_resize(const num::Tensor<float>& frame, const BBox& box, std::size_t side) {
    if (frame.rank() != 3) throw ShapeError("crop_resize: frame must be (c, w, h)");
    if (side == 0) throw InvalidGeometry("crop_resize: side must be positive");
    const std::size_t C = frame.dim(0), W = frame.dim(1), H = frame.dim(2);
    BBox b = box;
    b.x_min = std::clamp(b.x_min, 0.0, double(W));
    b.x_max = std::clamp(b.x_max, 0.0, double(W));
    b.y_min = std::clamp(b.y_min, 0.0, double(H));
    b.y_max = std::clamp(b.y_max, 0.0, double(H));
    if (!(b.width() > 0 && b.height() > 0)) throw InvalidGeometry("crop_resize: bbox has no area inside the frame");

    // Source sample for output pixel i sits at the center of its footprint.
    auto sample_axis = [side](double lo, double extent, std::size_t limit, std::size_t i) {
        double s = lo + (double(i) + 0.5) * extent / double(side) - 0.5;
        s = std::clamp(s, 0.0, double(limit - 1));
        const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, limit - 1);
        return std::tuple<std::size_t, std::size_t, double>{i0, i1, s - double(i0)};
    };
    num::Tensor<float> out({C, side, side});
    for (std::size_t i = 0; i < side; ++i) {
        const auto [x0, x1, fx] = sample_axis(b.x_min, b.width(), W, i);
        for (std::size_t j = 0; j < side; ++j) {
            const auto [y0, y1, fy] = sample_axis(b.y_min, b.height(), H, j);
            for (std::size_t c = 0; c < C; ++c) {
                const float* p = frame.ptr() + c * W * H;
                const double top = (1 - fx) * p[x0 * H + y0] + fx * p[x1 * H + y0];
                const double bot = (1 - fx) * p[x0 * H + y1] + fx * p[x1 * H + y1];
                const double v = (1 - fy) * top + fy * bot;
                out[(c * side + i) * side + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

}  // namespace habitmask
