#pragma once

#include <algorithm>
#include <random>
#include <string>

#include "habitmask/datamodel.hpp"

namespace fuzz {

// Random but schema-valid annotation: ids follow left-to-right order and
// coordinates carry more digits than the text format is required to keep.
inline habitmask::ClipAnnotation random_annotation(std::mt19937_64& rng, const habitmask::LabelSpace& labels) {
    using namespace habitmask;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ClipAnnotation a;
    a.clip_id = "clip_" + std::to_string(rng() % 100000);
    a.fps = std::uniform_int_distribution<int>(0, 1)(rng) ? 25.0 : 29.97;
    const std::size_t frames = 1 + rng() % 6;
    std::size_t idx = rng() % 4;
    for (std::size_t f = 0; f < frames; ++f) {
        FrameRecord fr;
        fr.frame_idx = idx;
        idx += 1 + rng() % 3;
        const std::size_t people = rng() % 4;
        std::vector<BBox> boxes;
        for (std::size_t p = 0; p < people; ++p) {
            const double x0 = 640 * u(rng), y0 = 360 * u(rng);
            boxes.push_back({x0, y0, x0 + 5 + 200 * u(rng), y0 + 5 + 300 * u(rng)});
        }
        const auto ids = people ? assign_person_ids(boxes) : std::vector<std::string>{};
        for (std::size_t p = 0; p < people; ++p) {
            PersonFrame pf;
            pf.person_id = ids[p];
            pf.bbox = boxes[p];
            for (auto& j : pf.skeleton.joints) j = {boxes[p].x_min + u(rng) * 100, boxes[p].y_min + u(rng) * 100, u(rng)};
            const std::size_t nl = rng() % 3;
            for (std::size_t k = 0; k < nl; ++k) pf.labels.push_back(labels.name(rng() % labels.size()));
            fr.persons.push_back(std::move(pf));
        }
        a.frames.push_back(std::move(fr));
    }
    return a;
}

// Field-by-field comparison with a float tolerance.
inline bool annotations_match(const habitmask::ClipAnnotation& a, const habitmask::ClipAnnotation& b, double tol) {
    auto near = [tol](double x, double y) { return std::abs(x - y) <= tol; };
    if (a.clip_id != b.clip_id || !near(a.fps, b.fps) || a.frames.size() != b.frames.size()) return false;
    for (std::size_t f = 0; f < a.frames.size(); ++f) {
        const auto& fa = a.frames[f];
        const auto& fb = b.frames[f];
        if (fa.frame_idx != fb.frame_idx || fa.persons.size() != fb.persons.size()) return false;
        for (std::size_t p = 0; p < fa.persons.size(); ++p) {
            const auto& pa = fa.persons[p];
            const auto& pb = fb.persons[p];
            if (pa.person_id != pb.person_id || pa.labels != pb.labels) return false;
            if (!near(pa.bbox.x_min, pb.bbox.x_min) || !near(pa.bbox.y_min, pb.bbox.y_min) ||
                !near(pa.bbox.x_max, pb.bbox.x_max) || !near(pa.bbox.y_max, pb.bbox.y_max))
                return false;
            for (std::size_t j = 0; j < habitmask::kNumJoints; ++j) {
                const auto& ja = pa.skeleton.joints[j];
                const auto& jb = pb.skeleton.joints[j];
                if (!near(ja.x, jb.x) || !near(ja.y, jb.y) || !near(ja.conf, jb.conf)) return false;
            }
        }
    }
    return true;
}

}  // namespace fuzz
