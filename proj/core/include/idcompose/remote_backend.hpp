#pragma once

#include <memory>
#include <string>

#include "idcompose/backends.hpp"
#include "idcompose/bench_clients.hpp"  // RetryPolicy / with_retry

namespace idc {

// ---------------------------------------------------------------------------
// HTTP-backed adapters: thin wrappers that satisfy the backend contracts by
// delegating to user-supplied model endpoints. They carry no model logic of
// their own — smoke tests cover the wire format; all quantitative behavior
// is the remote service's. Every factory mirrors the client convention:
// JSON over POST against base_url, bearer auth when api_key is non-empty,
// RetryPolicy-driven retries surfacing as adapter_error.
//
// Wire protocol (ARR = {"shape": [...], "data": [row-major doubles]}):
//   /encode_text   {"text"}                                  -> {"tokens": ARR (T x D)}
//   /encode_id     {"image": ARR}                            -> {"tokens": ARR (T x D)}
//   /encode_image  {"image": ARR}                            -> {"latent": ARR (C x h x w)}
//   /decode_latent {"latent": ARR}                           -> {"image": ARR (3 x H x W)}
//   /depth         {"image": ARR}                            -> {"depth": ARR (H x W)}
//   /control       {"depth": ARR, "latent_shape", "timestep"} -> {"residual": ARR}
//   /initial       {"prompt","height","width","seed"}        -> {"image": ARR (3 x H x W)}
//   /detect        {"image": ARR, "concept": "person"}       -> {"boxes": [[x0,y0,x1,y1],...]}
//   /embed_face    {"image": ARR}                            -> {"embedding": ARR | null}
//   /embed_image   {"image": ARR}                            -> {"embedding": ARR}
//   /score         {"image": ARR, "text"}                    -> {"score": number in [0,100]}
//
// The denoiser itself has no remote wrapper: the pipeline conditions it
// through in-process attention hooks (closures over mask and cache state),
// which a JSON wire cannot carry. Denoising backends integrate in-process
// against the Denoiser contract instead.
// ---------------------------------------------------------------------------

std::shared_ptr<TextEncoder> make_http_text_encoder(const std::string& base_url,
                                                    const std::string& api_key = "",
                                                    RetryPolicy policy = {});
std::shared_ptr<IdEncoder> make_http_id_encoder(const std::string& base_url,
                                                const std::string& api_key = "",
                                                RetryPolicy policy = {});
std::shared_ptr<ImageCodec> make_http_image_codec(const std::string& base_url,
                                                  const std::string& api_key = "",
                                                  RetryPolicy policy = {});
std::shared_ptr<DepthEstimator> make_http_depth_estimator(const std::string& base_url,
                                                          const std::string& api_key = "",
                                                          RetryPolicy policy = {});
std::shared_ptr<SpatialControl> make_http_spatial_control(const std::string& base_url,
                                                          const std::string& api_key = "",
                                                          RetryPolicy policy = {});
std::shared_ptr<InitialImageGenerator> make_http_initial_image_generator(
    const std::string& base_url, const std::string& api_key = "", RetryPolicy policy = {});
std::shared_ptr<PersonDetector> make_http_person_detector(const std::string& base_url,
                                                          const std::string& api_key = "",
                                                          RetryPolicy policy = {});
std::shared_ptr<FaceEmbedder> make_http_face_embedder(const std::string& base_url,
                                                      const std::string& api_key = "",
                                                      RetryPolicy policy = {});
std::shared_ptr<ImageEmbedder> make_http_image_embedder(const std::string& base_url,
                                                        const std::string& api_key = "",
                                                        RetryPolicy policy = {});
// `stage` names the adapter in retry failures ("clip-t", "hpsv2", ...).
std::shared_ptr<TextImageScorer> make_http_text_image_scorer(
    const std::string& base_url, const std::string& api_key = "", RetryPolicy policy = {},
    const std::string& stage = "text-image-scorer");

}  // namespace idc
