#pragma once

#include "idcompose/backends.hpp"

namespace idc {

// Desk-scale deterministic backend: every adapter is a pure function with
// fixed seeded weights, so pipeline properties are testable without any
// pretrained stack, network, or disk access.
//
// The denoiser works on a 4x8x8 latent flattened to 64 tokens of dim 4 and
// runs 2 blocks of {self-attention, cross-attention, seeded linear map},
// plus a linear timestep embedding. All weights come from seed 0, scaled
// well below spectral norm 1 so DDIM inversion stays stable.
std::shared_ptr<Denoiser> make_toy_denoiser(bool with_bias = true);

std::shared_ptr<TextEncoder> make_toy_text_encoder();
std::shared_ptr<IdEncoder> make_toy_id_encoder();
std::shared_ptr<ImageCodec> make_toy_image_codec();
std::shared_ptr<DepthEstimator> make_toy_depth_estimator();
std::shared_ptr<SpatialControl> make_toy_spatial_control();
std::shared_ptr<InitialImageGenerator> make_toy_initial_image_generator();
std::shared_ptr<PersonDetector> make_toy_person_detector();
std::shared_ptr<FaceEmbedder> make_toy_face_embedder();
std::shared_ptr<ImageEmbedder> make_toy_image_embedder();
std::shared_ptr<TextImageScorer> make_toy_text_image_scorer(std::uint64_t variant_seed);

BackendBundle make_toy_backend();

}  // namespace idc
