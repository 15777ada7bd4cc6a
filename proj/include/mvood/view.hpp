#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mvood {

enum class View { Axial, Coronal, Sagittal, Volume3d };

inline constexpr std::array<View, 3> kPlanarViews{View::Axial, View::Coronal, View::Sagittal};

inline std::string to_string(View v) {
  switch (v) {
    case View::Axial: return "axial";
    case View::Coronal: return "coronal";
    case View::Sagittal: return "sagittal";
    case View::Volume3d: return "volume3d";
  }
  return "?";
}

inline View parse_view(std::string_view s) {
  if (s == "axial") return View::Axial;
  if (s == "coronal") return View::Coronal;
  if (s == "sagittal") return View::Sagittal;
  if (s == "volume3d") return View::Volume3d;
  throw std::invalid_argument("unknown view '" + std::string(s) + "'");
}

}  // namespace mvood
