#pragma once

#include "efe/synth.hpp"

// Shared 200-sample smoke dataset, rendered once per process.
inline const efe::Dataset& smoke_data() {
    static const efe::Dataset data =
        efe::generate_dataset(efe::SceneSpec{}, efe::default_camera(), efe::ScreenPlane{}, 200, 17);
    return data;
}
