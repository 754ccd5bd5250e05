"""Toric Kähler geometry on Delzant polytopes: Abreu operator, Legendre duality, estimates."""
