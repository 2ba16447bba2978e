"""
Delay versus leakage of analysis windows
========================================

A centered 2048-sample Hann window reaches 1024 samples (64 ms at 16 kHz)
past its reference point. The asymmetric window keeps the long rising half
of a Hann window and ends with a short falling half of ``n_s`` samples, so
only ``n_s`` samples of lookahead are needed. The price is spectral leakage.
"""

from causal_amt.frontend import (WindowSpec, mainlobe_width_bins, make_window,
                                 sidelobe_level_db, window_delay_ms)

specs = [WindowSpec("centered_hann", 2048, 1024), WindowSpec("shifted_hann", 2048, 160)]
specs += [WindowSpec("asymmetric", 2048, n) for n in (160, 320, 480, 640, 800, 1024)]

print(f"{'window':>14} {'n_s':>5} {'delay ms':>9} {'sidelobe dB':>12} {'main lobe':>10}")
for spec in specs:
    w = make_window(spec)
    print(f"{spec.family:>14} {spec.effective_delay:5d} {window_delay_ms(spec):9.1f} "
          f"{sidelobe_level_db(w):12.2f} {mainlobe_width_bins(w):10.3f}")

# The shifted Hann window has only 10 ms of lookahead too, but it sees just
# 320 samples of signal; the asymmetric window still integrates 2048.
hann = make_window(WindowSpec("centered_hann", 2048, 1024))
half = make_window(WindowSpec("asymmetric", 2048, 1024))
print("\nasymmetric window with n_s = 1024 equals Hann exactly:", bool((hann == half).all()))
