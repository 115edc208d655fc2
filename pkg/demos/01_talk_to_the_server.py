"""Talk to the simulation server by hand, one frame at a time.

Everything the higher layers do boils down to this exchange: length-prefixed
frames of S-expressions over TCP. Run it and read the printed conversation.
"""

from sparkrl import protocol, sexpr, wire

PORT = 4610

# A throwaway in-process server. kind="real" would launch rcssserver3d
# instead (set RCSS_SERVER_BIN); the wire bytes are the same either way.
handle = wire.spawn_server("mock", PORT)
conn = wire.Connection.connect("127.0.0.1", PORT)

try:
    # Handshake: declare the robot model, then claim a uniform number.
    scene, init = protocol.encode_init(team="demo", unum=2)
    print(">>", scene.decode())
    conn.send_payload(scene)
    print(">>", init.decode())
    conn.send_payload(init)

    # The init reply is already the first perceptor frame: sim time, game
    # state, 22 joint angles, gyro, accelerometer, foot pressure, vision.
    # After this, the clock advances one cycle per (syn) we send.
    payload = conn.recv_payload()
    print("<<", payload[:120].decode(), "...")
    print("   raw frame was", len(payload), "bytes,",
          len(sexpr.parse(payload)), "top-level expressions")

    snapshot = protocol.decode_snapshot(payload)
    print("   sim_time      =", snapshot.sim_time)
    print("   game state    =", snapshot.game_state)
    print("   joints known  =", len(snapshot.joint_angles))
    print("   gyro          =", snapshot.gyro)
    print("   ball (vision) =", snapshot.ball_rel)

    # Command a joint: effector name + angular velocity in deg/s. The
    # command persists server-side until overwritten, like the real thing.
    from sparkrl import nao
    knee = nao.by_perceptor("rlj4")
    batch = protocol.EffectorBatch({knee.index: -50.0})
    print(">>", protocol.encode_effectors(batch).decode())
    conn.send_payload(protocol.encode_effectors(batch))
    snapshot = protocol.decode_snapshot(conn.recv_payload(), snapshot)
    print("   right knee after one cycle:",
          snapshot.joint_angles[knee.index], "deg")
finally:
    conn.close()
    wire.close_server(handle)
print("done; server reaped, port released")
