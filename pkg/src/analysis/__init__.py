"""Analysis routines: metrics, frequency stability, spectra and coherence."""
