#pragma once

#include <filesystem>
#include <string>

#include "qcomp/scene/scene.hpp"

namespace qcomp::scene {

inline constexpr int kSceneFormatVersion = 1;

/// Versioned JSON text, one point per line.
std::string scene_to_json(const Scene& s);
/// Throws ParseError (with line/field context) or VersionError; never returns a partial scene.
Scene scene_from_json(const std::string& text);

void save_scene(const Scene& s, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

}  // namespace qcomp::scene
