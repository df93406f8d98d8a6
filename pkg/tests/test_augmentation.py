import numpy as np
import pytest

from casemem.augmentation import (
    BASELINE_PROMPT,
    PROMPT_TEMPLATE,
    RIGHT_SCENARIO_LABEL,
    GeneratorEndpoint,
    baseline_generate,
    build_prompt,
    concatenate,
    generate,
)
from casemem.errors import DegenerateInputError, EmptyOutputError, PreconditionError
from casemem.mocks import MockModelServer, echo_text

from conftest import png_bytes, solid_raster

FAST = {"retries": 1, "backoff_s": 0.01}

RED = (255, 0, 0)


def test_equal_sized_images_concatenate_without_scaling():
    left = solid_raster((10, 20, 30), 100, 100)
    right = solid_raster((40, 50, 60), 100, 100)
    comp = concatenate(left, right)
    assert (comp.width, comp.height, comp.seam_x) == (210, 100, 100)
    assert np.all(comp.pixels[:, 100:110] == RED)


def test_wider_left_image_keeps_its_width():
    comp = concatenate(solid_raster((1, 1, 1), 200, 100), solid_raster((2, 2, 2), 100, 100))
    assert (comp.width, comp.height, comp.seam_x) == (310, 100, 200)


def test_taller_left_image_is_downscaled_preserving_aspect():
    # 100x200 left against 100x100 right: left becomes 50x100
    comp = concatenate(solid_raster((1, 1, 1), 100, 200), solid_raster((2, 2, 2), 100, 100))
    assert comp.seam_x == 50
    assert (comp.width, comp.height) == (160, 100)


def test_separator_band_is_pure_red_no_blending():
    left = solid_raster((255, 255, 255), 37, 23)
    right = solid_raster((0, 255, 0), 11, 23)
    comp = concatenate(left, right)
    band = comp.pixels[:, comp.seam_x:comp.seam_x + 10]
    assert np.all(band == RED)
    assert np.all(comp.pixels[:, comp.seam_x - 1] == (255, 255, 255))
    assert np.all(comp.pixels[:, comp.seam_x + 10] == (0, 255, 0))


def test_orientation_new_image_is_on_the_left():
    new = solid_raster((9, 9, 9), 16, 16)
    new[0, 0] = (200, 100, 50)  # marker pixel
    retrieved = solid_raster((70, 70, 70), 16, 16)
    comp = concatenate(new, retrieved)
    assert tuple(comp.pixels[0, 0]) == (200, 100, 50)
    assert np.all(comp.pixels[:, comp.seam_x + 10:] == 70)


def test_concatenate_accepts_encoded_bytes():
    comp = concatenate(png_bytes(color=(5, 5, 5), size=(8, 8)),
                       png_bytes(color=(6, 6, 6), size=(8, 8)))
    assert (comp.width, comp.height) == (26, 8)


def test_zero_area_image_rejected():
    with pytest.raises(DegenerateInputError):
        concatenate(np.empty((0, 5, 3), dtype=np.uint8), solid_raster((1, 1, 1), 5, 5))


def test_undecodable_bytes_rejected():
    with pytest.raises(PreconditionError):
        concatenate(b"junk", solid_raster((1, 1, 1), 5, 5))


GOLDEN_PROMPT = (
    "The given image has left and right parts separated by a distinct red line. "
    "The corresponding textual description has been given for the scenario on "
    "the right. Please give the textual description of the driving scenario on "
    "the left accordingly.\n"
    "Description of the right scenario:\n"
    "A wet road at dusk."
)


def test_build_prompt_layout():
    assert build_prompt("A wet road at dusk.") == GOLDEN_PROMPT


def test_prompt_template_bytes_never_vary():
    for caption in ("one", "two", "three\nlines"):
        prompt = build_prompt(caption)
        assert prompt.startswith(PROMPT_TEMPLATE + "\n" + RIGHT_SCENARIO_LABEL + "\n")
        assert prompt.encode()[:len(PROMPT_TEMPLATE.encode())] == PROMPT_TEMPLATE.encode()


def test_prompt_passes_newlines_through():
    caption = "line one\nline two"
    assert build_prompt(caption).endswith("\n" + caption)


def test_prompt_rejects_empty_caption():
    with pytest.raises(PreconditionError):
        build_prompt("")


def test_generate_against_echo_mock():
    with MockModelServer() as server:
        endpoint = GeneratorEndpoint(server.base_url)
        comp = concatenate(solid_raster((1, 2, 3), 8, 8), solid_raster((4, 5, 6), 8, 8))
        prompt = build_prompt("a stalled truck")
        out = generate(comp, prompt, endpoint, **FAST)
        assert out == echo_text(prompt)
        assert out == "ECHO:" + prompt[:40]


def test_generate_empty_reply_is_error():
    with MockModelServer(generator_reply="") as server:
        endpoint = GeneratorEndpoint(server.base_url)
        comp = concatenate(solid_raster((1, 2, 3), 8, 8), solid_raster((4, 5, 6), 8, 8))
        with pytest.raises(EmptyOutputError):
            generate(comp, build_prompt("x"), endpoint, **FAST)


def test_baseline_prompt_bytes():
    sent = {}

    def capture(prompt):
        sent["prompt"] = prompt
        return echo_text(prompt)

    with MockModelServer(generator_reply=capture) as server:
        endpoint = GeneratorEndpoint(server.base_url)
        out = baseline_generate(solid_raster((1, 2, 3), 8, 8), endpoint, **FAST)
    assert sent["prompt"] == BASELINE_PROMPT
    assert sent["prompt"].encode() == b"Please give the textual description of the driving scenario."
    assert out.startswith("ECHO:Please give the textual descr")
