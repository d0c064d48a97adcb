#include "idcompose/backends.hpp"

#include <string>

#include "idcompose/errors.hpp"

namespace idc {

namespace {

void need(const void* p, const char* role) {
    if (!p)
        throw config_error(std::string("backend bundle is missing the ") + role + " adapter");
}

}  // namespace

void BackendBundle::require_generation(bool depth_control) const {
    need(denoiser.get(), "denoiser");
    need(text_encoder.get(), "text-encoder");
    need(id_encoder.get(), "id-encoder");
    need(image_codec.get(), "image-codec");
    if (depth_control) {
        need(depth_estimator.get(), "depth-estimator");
        need(spatial_control.get(), "spatial-control");
        need(initial_image_generator.get(), "initial-image-generator");
    }
}

void BackendBundle::require_evaluation() const {
    need(person_detector.get(), "person-detector");
    need(face_embedder.get(), "face-embedder");
    need(image_embedder.get(), "image-embedder");
    need(text_image_scorer.get(), "text-image-scorer");
    need(hps_scorer.get(), "hps-scorer");
}

}  // namespace idc
