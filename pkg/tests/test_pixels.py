import numpy as np
import pytest

from fmcodec.pixels import (
    CB_SCALE,
    Clip,
    Frame,
    FrameError,
    PixelFormat,
    UnsupportedFormat,
    chroma_resample,
    frame_bytes,
    load_raw,
    psnr,
    psnr_from_mse,
    rgb_to_yuv_bt709,
    to_file_format,
    weighted_psnr,
    write_raw,
    write_y4m,
    yuv_to_rgb_bt709,
)

from .common import TemporaryDir, flat_frame, one_test_per_assert, random_frame


@pytest.fixture
def tmpdir():
    return TemporaryDir()


def rgb(r, g, b, size=16):
    return flat_frame(size, size, (r, g, b), format=PixelFormat.RGBR)


def samples(frame):
    return tuple(float(p[0, 0]) for p in frame.planes)


def frame420(width=64, height=64, y=100, u=90, v=160):
    ch, cw = (height + 1) // 2, (width + 1) // 2
    return Frame(
        width,
        height,
        PixelFormat.YUV420P8,
        (
            np.full((height, width), y, dtype=np.uint8),
            np.full((ch, cw), u, dtype=np.uint8),
            np.full((ch, cw), v, dtype=np.uint8),
        ),
    )


@one_test_per_assert
def test_frame_bytes():
    assert frame_bytes(64, 64, "yuv420p") == 6144
    assert frame_bytes(64, 64, "rgb24") == 12288
    assert frame_bytes(17, 17, "yuv420p") == 17 * 17 + 2 * 9 * 9


def test_frame_rejects_small():
    with pytest.raises(FrameError):
        flat_frame(8, 64)


def test_frame_rejects_bad_plane_shape():
    with pytest.raises(FrameError):
        Frame(
            32,
            32,
            PixelFormat.YUV420P8,
            (np.zeros((32, 32)), np.zeros((32, 32)), np.zeros((16, 16))),
        )


def test_frame_rejects_non_finite():
    planes = np.full((3, 16, 16), 1.0)
    planes[1, 3, 3] = np.nan
    with pytest.raises(FrameError):
        Frame.from_stack(planes, PixelFormat.YUV444R)


def test_frame_planes_read_only():
    frame = flat_frame(16, 16)
    with pytest.raises(ValueError):
        frame.planes[0][0, 0] = 3


def test_load_raw_yuv420(tmpdir):
    path = tmpdir.write("clip.yuv", bytes(range(256)) * 48)
    clip = load_raw(path, 64, 64, "yuv420p")
    assert len(clip) == 2
    assert clip[0].format is PixelFormat.YUV420P8
    assert clip[0].planes[1].shape == (32, 32)


def test_load_raw_rgb24(tmpdir):
    path = tmpdir.write("clip.rgb", bytes(12288))
    clip = load_raw(path, 64, 64, "rgb24")
    assert len(clip) == 1
    assert clip[0].format is PixelFormat.RGBR


def test_load_raw_truncated(tmpdir):
    path = tmpdir.write("clip.yuv", bytes(6000))
    with pytest.raises(FrameError):
        load_raw(path, 64, 64, "yuv420p")


def test_load_raw_unknown_format(tmpdir):
    path = tmpdir.write("clip.yuv", bytes(6144))
    with pytest.raises(UnsupportedFormat):
        load_raw(path, 64, 64, "nv12")


def test_load_y4m(tmpdir):
    payload = bytes(range(256)) * 24
    data = b"YUV4MPEG2 W64 H64 F30:1 Ip A1:1 C420jpeg XYSCSS=420JPEG\n"
    data += b"FRAME\n" + payload
    path = tmpdir.write("clip.y4m", data)
    clip = load_raw(path)
    assert len(clip) == 1
    assert clip.fps == 30
    assert clip.width == 64 and clip.height == 64
    assert clip[0].planes[0].tobytes() == payload[:4096]


def test_load_y4m_unsupported_chroma(tmpdir):
    data = b"YUV4MPEG2 W64 H64 F30:1 C444\nFRAME\n" + bytes(64 * 64 * 3)
    path = tmpdir.write("clip.y4m", data)
    with pytest.raises(UnsupportedFormat):
        load_raw(path)


def test_load_y4m_dimension_mismatch(tmpdir):
    data = b"YUV4MPEG2 W64 H64 F30:1 C420\nFRAME\n" + bytes(6144)
    path = tmpdir.write("clip.y4m", data)
    with pytest.raises(FrameError):
        load_raw(path, 32, 32)


def test_load_y4m_truncated(tmpdir):
    data = b"YUV4MPEG2 W64 H64 F30:1 C420\nFRAME\n" + bytes(6000)
    path = tmpdir.write("clip.y4m", data)
    with pytest.raises(FrameError):
        load_raw(path)


def test_y4m_write_then_read(tmpdir):
    frames = [frame420(y=i * 10) for i in range(3)]
    path = tmpdir.rel("out.y4m")
    write_y4m(path, Clip(frames, fps=25))
    clip = load_raw(path)
    assert len(clip) == 3
    assert clip.fps == 25
    for a, b in zip(frames, clip):
        assert all(np.array_equal(pa, pb) for pa, pb in zip(a.planes, b.planes))


def test_raw_write_then_read(tmpdir):
    frames = [frame420(y=7), frame420(u=3)]
    path = tmpdir.rel("out.yuv")
    write_raw(path, frames, "yuv420p")
    assert len(tmpdir.read("out.yuv")) == 2 * 6144
    clip = load_raw(path, 64, 64)
    assert np.array_equal(clip[1].planes[1], frames[1].planes[1])


@one_test_per_assert
def test_rgb_to_yuv_examples():
    assert samples(rgb_to_yuv_bt709(rgb(255, 255, 255))) == pytest.approx(
        (255, 128, 128), abs=1e-9
    )
    assert samples(rgb_to_yuv_bt709(rgb(0, 0, 0))) == pytest.approx(
        (0, 128, 128), abs=1e-9
    )
    assert samples(rgb_to_yuv_bt709(rgb(255, 0, 0))) == pytest.approx(
        (54.213, 128 - 54.213 / CB_SCALE, 255.5), abs=1e-9
    )


def test_rgb_to_yuv_requires_rgb():
    with pytest.raises(FrameError):
        rgb_to_yuv_bt709(flat_frame(16, 16))


def test_yuv_to_rgb_white():
    white = flat_frame(16, 16, (255, 128, 128))
    assert samples(yuv_to_rgb_bt709(white)) == pytest.approx((255, 255, 255))


def test_gray_round_trip_exact():
    levels = np.arange(256, dtype=np.float64).reshape(16, 16)
    gray = Frame(16, 16, PixelFormat.RGBR, (levels, levels, levels))
    back = yuv_to_rgb_bt709(rgb_to_yuv_bt709(gray))
    for p in back.planes:
        assert np.array_equal(np.rint(p), levels)


def test_colour_round_trip_random():
    rng = np.random.default_rng(3)
    # 10**5 triples laid out as a 250x400 frame
    planes = rng.integers(0, 256, size=(3, 250, 400)).astype(np.float64)
    frame = Frame.from_stack(planes, PixelFormat.RGBR)
    back = yuv_to_rgb_bt709(rgb_to_yuv_bt709(frame))
    assert np.max(np.abs(back.stack() - planes)) < 1.0


def test_chroma_constant_up_and_down():
    up = chroma_resample(frame420(), "up")
    assert up.format is PixelFormat.YUV444R
    assert np.all(up.planes[1] == 90)
    assert np.all(up.planes[2] == 160)
    down = chroma_resample(up, "down")
    assert all(
        np.array_equal(a, b) for a, b in zip(down.planes, frame420().planes)
    )


def test_chroma_down_odd_dimensions():
    frame = flat_frame(17, 19, (10, 20, 30))
    down = chroma_resample(frame, "down")
    assert down.planes[1].shape == (10, 9)
    assert np.all(down.planes[1] == 20)


def test_chroma_ramp_up_then_down():
    width, height = 512, 16
    ramp = np.tile(np.arange(256, dtype=np.uint8), (height // 2, 1))
    frame = Frame(
        width,
        height,
        PixelFormat.YUV420P8,
        (np.zeros((height, width), dtype=np.uint8), ramp, ramp),
    )
    back = chroma_resample(chroma_resample(frame, "up"), "down")
    dev = np.abs(back.planes[1].astype(int) - ramp.astype(int))
    assert dev.max() <= 1


def test_chroma_upsample_co_sited():
    u = np.array([[0, 100], [200, 40]], dtype=np.uint8)
    u = np.kron(u, np.ones((4, 4), dtype=np.uint8))
    frame = Frame(
        16,
        16,
        PixelFormat.YUV420P8,
        (np.zeros((16, 16), dtype=np.uint8), u, u),
    )
    up = chroma_resample(frame, "up").planes[1]
    assert up[0, 0] == u[0, 0]
    assert up[2, 6] == u[1, 3]
    assert up[0, 7] == (u[0, 3] + u[0, 4]) / 2


def test_chroma_resample_bad_direction():
    with pytest.raises(ValueError):
        chroma_resample(frame420(), "sideways")


def test_file_format_conversions():
    rgb_frame = rgb(255, 0, 0)
    yuv = to_file_format(rgb_frame, "yuv420p")
    assert yuv.format is PixelFormat.YUV420P8
    assert int(yuv.planes[0][0, 0]) == 54
    back = to_file_format(yuv, "rgb24")
    assert back.format is PixelFormat.RGBR
    assert abs(samples(back)[0] - 255) <= 2


@one_test_per_assert
def test_psnr_from_mse():
    assert psnr_from_mse(0) == 100
    assert psnr_from_mse(0, cap=60) == 60
    assert psnr_from_mse(1.0) == pytest.approx(48.1308036, abs=1e-6)
    assert psnr_from_mse(1e-12) == 100


@one_test_per_assert
def test_weighted_psnr():
    assert weighted_psnr(40, 44, 44) == 41.0
    assert weighted_psnr(37.5, 37.5, 37.5) == 37.5


def test_psnr_identical():
    frame = random_frame(np.random.default_rng(0), 32, 32)
    report = psnr(frame, frame)
    assert report.psnr_y == report.psnr_u == report.psnr_v == 100
    assert report.psnr_weighted == 100
    assert report.combined_distortion == 0
    assert report.psnr_rgb is None


def test_psnr_luma_off_by_one():
    a = flat_frame(32, 32, (100, 90, 90))
    report = psnr(a, flat_frame(32, 32, (101, 90, 90)))
    assert report.psnr_y == pytest.approx(48.131, abs=1e-3)
    assert report.psnr_u == 100
    assert report.combined_distortion == pytest.approx(6 / 8)


def test_psnr_symmetric():
    rng = np.random.default_rng(1)
    a = random_frame(rng, 32, 32)
    b = random_frame(rng, 32, 32)
    assert psnr(a, b) == psnr(b, a)


def test_psnr_rgb_frames():
    rng = np.random.default_rng(2)
    a = random_frame(rng, 32, 32, format=PixelFormat.RGBR)
    b = random_frame(rng, 32, 32, format=PixelFormat.RGBR)
    report = psnr(a, b)
    assert report.psnr_rgb is not None
    assert 0 < report.psnr_rgb < 100
    assert report.psnr_weighted == pytest.approx(
        weighted_psnr(report.psnr_y, report.psnr_u, report.psnr_v)
    )


def test_psnr_rgb_views_mix_distortion():
    a = flat_frame(16, 16, (100, 128, 128))
    b = flat_frame(16, 16, (102, 128, 128))
    ra, rb = rgb(10, 10, 10), rgb(11, 11, 11)
    report = psnr(a, b, rgb=(ra, rb))
    # D_yuv = 6 * 4 / 8 = 3, D_rgb = 1
    assert report.combined_distortion == pytest.approx(0.8 * 3 + 0.2 * 1)


def test_psnr_geometry_mismatch():
    with pytest.raises(FrameError):
        psnr(flat_frame(16, 16), flat_frame(32, 16))
