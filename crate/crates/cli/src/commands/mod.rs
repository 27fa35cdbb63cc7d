pub mod equilibrium; pub mod simulate; pub mod verify;
