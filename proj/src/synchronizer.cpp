#include <algorithm>

#include "mvqc/pipeline.hpp"

namespace mvqc {

std::vector<CameraId> FrameBundle::missing() const {
    std::vector<CameraId> out;
    for (CameraId c : kAllCameras) {
        if (!slots[index_of(c)]) out.push_back(c);
    }
    return out;
}

Synchronizer::Synchronizer(double timeout_ms) : timeout_ms_(timeout_ms) {
    if (!(timeout_ms > 0.0)) throw std::invalid_argument("synchronizer timeout must be positive");
}

std::optional<double> Synchronizer::next_deadline() const {
    if (arrival_order_.empty()) return std::nullopt;
    return pending_.at(arrival_order_.front()).first_arrival_ms + timeout_ms_;
}

FrameBundle Synchronizer::take(const std::string& id, double now_ms) {
    auto node = pending_.extract(id);
    FrameBundle b = std::move(node.mapped());
    b.emitted_ms = now_ms;
    arrival_order_.erase(std::find(arrival_order_.begin(), arrival_order_.end(), id));
    std::array<bool, kCameraCount> mask{};
    for (CameraId c : kAllCameras) mask[index_of(c)] = b.slots[index_of(c)].has_value();
    // TODO: bound emitted_ by age so long-running streams do not grow it forever.
    emitted_.emplace(id, mask);
    return b;
}

std::vector<FrameBundle> Synchronizer::poll(double now_ms) {
    std::vector<FrameBundle> out;
    while (!arrival_order_.empty()) {
        const std::string& id = arrival_order_.front();
        if (now_ms - pending_.at(id).first_arrival_ms < timeout_ms_) break;
        out.push_back(take(std::string(id), now_ms));
    }
    return out;
}

std::vector<FrameBundle> Synchronizer::flush(double now_ms) {
    std::vector<FrameBundle> out;
    while (!arrival_order_.empty()) out.push_back(take(std::string(arrival_order_.front()), now_ms));
    return out;
}

std::vector<FrameBundle> Synchronizer::offer(CameraEvent event, double now_ms) {
    std::vector<FrameBundle> out = poll(now_ms);
    const auto cam = index_of(event.camera);

    if (const auto done = emitted_.find(event.assembly_id); done != emitted_.end()) {
        issues_.push_back({event.assembly_id, event.camera,
                           done->second[cam] ? "duplicate event after the bundle was emitted"
                                             : "late event after the bundle was emitted; dropped"});
        return out;
    }

    auto [it, inserted] = pending_.try_emplace(event.assembly_id);
    FrameBundle& bundle = it->second;
    if (inserted) {
        bundle.assembly_id = event.assembly_id;
        bundle.first_arrival_ms = now_ms;
        arrival_order_.push_back(event.assembly_id);
    }
    if (bundle.slots[cam]) {
        bundle.poisoned = true;
        bundle.error = "duplicate event from camera " + std::string(to_string(event.camera));
        out.push_back(take(event.assembly_id, now_ms));
        return out;
    }
    bundle.slots[cam] = std::move(event.detections);
    bundle.detect_ms[cam] = event.detect_ms;
    if (std::all_of(bundle.slots.begin(), bundle.slots.end(), [](const auto& s) { return s.has_value(); })) {
        bundle.complete = true;
        out.push_back(take(event.assembly_id, now_ms));
    }
    return out;
}

}  // namespace mvqc
