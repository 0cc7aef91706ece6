#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "habitmask/tensor.hpp"

namespace habitmask {

inline constexpr std::size_t kNumJoints = 15;

// Canonical joint order shared by annotations, the body graph and the masks.
enum class JointId : std::uint8_t {
    Nose = 0,
    HeadBottom = 1,
    HeadTop = 2,
    LeftShoulder = 3,
    RightShoulder = 4,
    LeftElbow = 5,
    RightElbow = 6,
    LeftWrist = 7,
    RightWrist = 8,
    LeftHip = 9,
    RightHip = 10,
    LeftKnee = 11,
    RightKnee = 12,
    LeftAnkle = 13,
    RightAnkle = 14,
};

std::string_view joint_name(std::size_t index);

// Index of the left/right mirror partner (self for midline joints).
std::size_t mirror_joint(std::size_t index);

struct Joint {
    double x = 0;     // pixels, horizontal
    double y = 0;     // pixels, vertical
    double conf = 0;  // [0, 1]

    friend bool operator==(const Joint&, const Joint&) = default;
};

struct Skeleton {
    std::array<Joint, kNumJoints> joints{};

    friend bool operator==(const Skeleton&, const Skeleton&) = default;
};

struct BBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const noexcept { return x_max - x_min; }
    double height() const noexcept { return y_max - y_min; }
    double center_x() const noexcept { return 0.5 * (x_min + x_max); }
    double center_y() const noexcept { return 0.5 * (y_min + y_max); }
    bool valid() const noexcept;

    friend bool operator==(const BBox&, const BBox&) = default;
};

struct PersonFrame {
    std::string person_id;  // "P1", "P2", ... left to right
    BBox bbox;
    Skeleton skeleton;
    // Category names; empty means "none". Several names encode a compound
    // label such as "cross legs & touch ear".
    std::vector<std::string> labels;

    friend bool operator==(const PersonFrame&, const PersonFrame&) = default;
};

struct FrameRecord {
    std::size_t frame_idx = 0;
    std::vector<PersonFrame> persons;

    friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct ClipAnnotation {
    std::string clip_id;
    double fps = 25.0;
    std::vector<FrameRecord> frames;

    friend bool operator==(const ClipAnnotation&, const ClipAnnotation&) = default;
};

// One clip of pixels laid out (c, L, w, h), row-major, values in [0, 1].
// Element (c, t, x, y) is the value at column x, row y of frame t.
class ClipTensor {
public:
    ClipTensor() = default;
    ClipTensor(std::size_t channels, std::size_t frames, std::size_t width, std::size_t height, float fill = 0.0f);
    explicit ClipTensor(num::Tensor<float> pixels);

    std::size_t channels() const { return pixels_.dim(0); }
    std::size_t frames() const { return pixels_.dim(1); }
    std::size_t width() const { return pixels_.dim(2); }
    std::size_t height() const { return pixels_.dim(3); }

    float& at(std::size_t c, std::size_t t, std::size_t x, std::size_t y) {
        return pixels_[((c * frames() + t) * width() + x) * height() + y];
    }
    float at(std::size_t c, std::size_t t, std::size_t x, std::size_t y) const {
        return pixels_[((c * frames() + t) * width() + x) * height() + y];
    }

    const num::Tensor<float>& pixels() const noexcept { return pixels_; }
    num::Tensor<float>& pixels() noexcept { return pixels_; }

    // Frame t as a (c, w, h) tensor.
    num::Tensor<float> frame(std::size_t t) const;
    void set_frame(std::size_t t, const num::Tensor<float>& frame);

    friend bool operator==(const ClipTensor&, const ClipTensor&) = default;

private:
    num::Tensor<float> pixels_;
};

class LabelSpace {
public:
    LabelSpace() = default;
    explicit LabelSpace(std::vector<std::string> categories,
                        std::map<std::string, std::vector<std::string>> emotion_attrs = {});

    // Default 30-category habitual-behavior label space.
    static LabelSpace habitual_behaviors();

    std::size_t size() const noexcept { return categories_.size(); }
    const std::vector<std::string>& categories() const noexcept { return categories_; }
    const std::string& name(std::size_t index) const { return categories_.at(index); }
    // Throws SchemaError for unknown names.
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const;
    // Empty when the category has no recorded emotion attributes.
    std::vector<std::string> emotions(std::string_view name) const;

    friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

private:
    std::vector<std::string> categories_;
    std::map<std::string, std::vector<std::string>> emotion_attrs_;
};

// IDs "P1".."Pn" by ascending bbox horizontal center; ties by y_min, then
// the remaining coordinates, then input position (identical boxes only). Throws EmptyInput / InvalidGeometry.
std::vector<std::string> assign_person_ids(std::span<const BBox> boxes);

// JSON Lines: one frame object per line. Throws ParseError (with line
// number) for malformed lines and SchemaError for structural violations.
ClipAnnotation parse_annotation(std::istream& in);
ClipAnnotation parse_annotation(std::string_view text);
// Throws InvariantError for an annotation without frames.
void write_annotation(const ClipAnnotation& a, std::ostream& out);
std::string write_annotation(const ClipAnnotation& a);

ClipAnnotation read_annotation_file(const std::filesystem::path& path);
void write_annotation_file(const std::filesystem::path& path, const ClipAnnotation& a);

// Compound-label helpers: "cross legs & touch ear" <-> {"cross legs", "touch ear"}.
std::vector<std::string> split_label(std::string_view text);
std::string join_labels(const std::vector<std::string>& labels);

// .hclip container: "HCLP", u16 version, u32 c/L/w/h, f32 data (all little-endian).
inline constexpr std::uint16_t kClipVersion = 1;
std::string encode_clip(const ClipTensor& clip);
ClipTensor decode_clip(std::string_view bytes);
void write_clip(const std::filesystem::path& path, const ClipTensor& clip);
ClipTensor read_clip(const std::filesystem::path& path);

// Bilinear resample of the bbox region of a (c, w, h) frame to (c, side, side).
// The box is clamped to the frame first; a box with no area left throws
// InvalidGeometry.
num::Tensor<float> crop_resize(const num::Tensor<float>& frame, const BBox& box, std::size_t side);

}  // namespace habitmask
